import numpy as np
import pytest

from otmdr.data import Batch, make_two_moons
from otmdr.nn import ModelSpec, QuadraticHead, init_params
from otmdr.tensor import ParamVector


def quad_theta(*values):
    return ParamVector({"theta": np.array(values, dtype=np.float64)})


@pytest.fixture
def quad():
    return QuadraticHead(2)


@pytest.fixture
def moons_small():
    return make_two_moons(64, 0.1, seed=3)


@pytest.fixture
def mlp_case(moons_small):
    model = ModelSpec((2, 8, 2))
    return model, init_params(model, 11), moons_small.as_batch()


def random_batch(rng: np.random.Generator, n: int, dim: int, classes: int) -> Batch:
    return Batch(rng.normal(size=(n, dim)), rng.integers(0, classes, size=n), np.arange(n))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

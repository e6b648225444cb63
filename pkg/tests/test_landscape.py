import csv

import numpy as np
import pytest

from otmdr.data import Dataset, batches, make_two_moons
from otmdr.landscape import (
    ensemble_directions,
    ensemble_nll,
    loss_grid,
    random_directions,
    sharpness_probe,
    write_csv,
)
from otmdr.nn import ModelSpec, QuadraticHead, init_params
from otmdr.perturb import EnsembleState, ensemble_predict, sgd_update
from otmdr.rng import RngStream
from otmdr.tensor import evaluate_loss, gradient

from conftest import quad_theta


def placeholder_ds(n=4):
    return Dataset(np.zeros((n, 1)), np.zeros(n, dtype=np.int_), 2)


@pytest.fixture
def mlp():
    model = ModelSpec((2, 6, 2))
    return model, init_params(model, 3), make_two_moons(60, 0.1, 1)


class TestDirections:
    def test_orthogonal_and_normalized(self, mlp):
        _, params, _ = mlp
        d1, d2 = random_directions(params, RngStream(0))
        assert abs(d1.dot(d2)) < 1e-10
        for name in params.names:
            assert np.linalg.norm(d1[name]) == pytest.approx(np.linalg.norm(params[name]), abs=1e-12)

    def test_zero_segments_stay_zero(self, mlp):
        _, params, _ = mlp
        d1, _ = random_directions(params, RngStream(0))
        assert not d1["b0"].any()

    def test_deterministic(self, mlp):
        _, params, _ = mlp
        a, b = random_directions(params, RngStream(4)), random_directions(params, RngStream(4))
        assert a[0].bit_equal(b[0]) and a[1].bit_equal(b[1])

    def test_ensemble_directions_per_member(self, mlp):
        model, params, _ = mlp
        state = EnsembleState([params, init_params(model, 9)])
        d1s, d2s = ensemble_directions(state, RngStream(0))
        assert len(d1s) == len(d2s) == 2
        assert not d1s[0].bit_equal(d1s[1])


class TestLossGrid:
    def test_center_cell_exact(self, mlp):
        model, params, ds = mlp
        d1, d2 = random_directions(params, RngStream(0))
        g = loss_grid(params, model, ds, d1, d2, 0.5, 5)
        assert g.losses[2, 2] == evaluate_loss(params, model, ds.as_batch())
        np.testing.assert_array_equal(g.alphas, [-0.5, -0.25, 0.0, 0.25, 0.5])

    def test_cells_match_direct_evaluation(self, mlp):
        model, params, ds = mlp
        d1, d2 = random_directions(params, RngStream(1))
        g = loss_grid(params, model, ds, d1, d2, 1.0, 3)
        assert g.losses[0, 2] == evaluate_loss(params + d1 * -1.0 + d2 * 1.0, model, ds.as_batch())

    def test_csv_row_count(self, tmp_path):
        head, theta = QuadraticHead(2), quad_theta(0.5, -0.2)
        g = loss_grid(theta, head, placeholder_ds(), quad_theta(1.0, 0.0), quad_theta(0.0, 1.0), 1.0, 41)
        write_csv(g, tmp_path / "l.csv")
        rows = list(csv.reader(open(tmp_path / "l.csv")))
        assert rows[0] == ["alpha", "beta", "loss"]
        assert len(rows) == 1682
        assert float(rows[1 + 20 * 41 + 20][2]) == g.losses[20, 20]
        # 17 significant digits round-trip exactly
        assert all(float(r[2]) == v for r, v in zip(rows[1:], g.losses.ravel()))

    def test_symmetric_quadratic(self):
        g = loss_grid(quad_theta(0.0, 0.0), QuadraticHead(2), placeholder_ds(), quad_theta(1.0, 0.3), quad_theta(-0.3, 1.0), 1.0, 11)
        np.testing.assert_allclose(g.losses, g.losses[::-1, ::-1], atol=1e-9)
        assert np.all(np.isfinite(g.losses)) and g.losses.shape == (11, 11)

    def test_pure_function(self, mlp):
        model, params, ds = mlp
        d1, d2 = random_directions(params, RngStream(2))
        a = loss_grid(params, model, ds, d1, d2, 1.0, 5)
        b = loss_grid(params, model, ds, d1, d2, 1.0, 5)
        np.testing.assert_array_equal(a.losses, b.losses)

    @pytest.mark.parametrize("steps", [2, 4, 1])
    def test_steps_validated(self, mlp, steps):
        model, params, ds = mlp
        with pytest.raises(ValueError):
            loss_grid(params, model, ds, params, params, 1.0, steps)

    def test_ensemble_joint_shift(self, mlp):
        model, params, ds = mlp
        state = EnsembleState([params, init_params(model, 8)])
        d1s, d2s = ensemble_directions(state, RngStream(0))
        g = loss_grid(state, model, ds, d1s, d2s, 1.0, 3)
        moved = EnsembleState([m + u * 1.0 + v * -1.0 for m, u, v in zip(state.members, d1s, d2s)])
        p = ensemble_predict(moved, model, ds.inputs)
        assert g.losses[2, 0] == pytest.approx(-np.mean(np.log(p[np.arange(len(ds)), ds.labels])), rel=1e-14)
        assert g.losses[1, 1] == ensemble_nll(state, model, ds)


class TestSharpness:
    def test_quadratic_analytic(self):
        assert sharpness_probe(quad_theta(1.0, 0.0), QuadraticHead(2), placeholder_ds(), 0.5) == pytest.approx(0.625, abs=1e-15)

    def test_small_rho_first_order(self, mlp):
        model, params, ds = mlp
        rho = 1e-4
        gnorm = gradient(params, model, ds.as_batch()).norm()
        assert sharpness_probe(params, model, ds, rho) == pytest.approx(rho * gnorm, rel=0.05)

    def test_zero_gradient(self):
        assert sharpness_probe(quad_theta(0.0, 0.0), QuadraticHead(2), placeholder_ds(), 0.5) == 0.0

    def test_rho_validated(self):
        with pytest.raises(ValueError):
            sharpness_probe(quad_theta(1.0, 0.0), QuadraticHead(2), placeholder_ds(), 0.0)

    def test_converged_moons_nonnegative(self):
        model = ModelSpec((2, 16, 2))
        ds = make_two_moons(300, 0.1, 0)
        theta = init_params(model, 0)
        for epoch in range(40):
            for b in batches(ds, 32, RngStream(0, epoch=epoch)):
                theta = sgd_update(theta, model, b, 0.1)
        assert sharpness_probe(theta, model, ds, 0.05) >= -1e-6

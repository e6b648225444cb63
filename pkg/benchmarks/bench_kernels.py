"""Compare the compiled and numpy kernel backends.

Run with ``python benchmarks/bench_kernels.py``. Kernel timings call both
implementations directly; the end-to-end OT-MDR step is timed in a child
process per backend because the backend is fixed at import.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from otmdr import _fallback

try:
    from otmdr import _core
except ImportError:
    _core = None

STEP_SNIPPET = """
import timeit
from otmdr import kernels
from otmdr.data import make_two_moons
from otmdr.nn import ModelSpec, init_params
from otmdr.perturb import PerturbConfig, otmdr_update
from otmdr.rng import RngStream
model = ModelSpec((2, 64, 64, 2))
batch = make_two_moons(64, 0.2, 0).as_batch()
theta = init_params(model, 0)
cfg = PerturbConfig(rho1=0.05, rho2=0.1, K=2, lr=0.05)
fn = lambda: otmdr_update(theta, model, batch, cfg, RngStream(0))
print(kernels.BACKEND, min(timeit.repeat(fn, number={number}, repeat=5)) / {number})
"""


def kernel_cases(rng: np.random.Generator):
    logits = rng.normal(size=(64, 10))
    labels = rng.integers(0, 10, size=64)
    sums = rng.normal(size=100_000)
    return {
        "normal_block(n=100k)": lambda m: m.normal_block(12345, 0, 100_000),
        "uniform_block(n=100k)": lambda m: m.uniform_block(12345, 0, 100_000),
        "pairwise_sum(n=100k)": lambda m: m.pairwise_sum(sums),
        "softmax_xent(64x10)": lambda m: m.softmax_xent(logits, labels),
    }


def best(fn, number: int) -> float:
    return min(timeit.repeat(fn, number=number, repeat=5)) / number


def step_time(pure: bool, number: int) -> tuple[str, float]:
    env = dict(os.environ)
    if pure:
        env["OTMDR_PURE_PYTHON"] = "1"
    else:
        env.pop("OTMDR_PURE_PYTHON", None)
    out = subprocess.run(
        [sys.executable, "-c", STEP_SNIPPET.format(number=number)], env=env, check=True, capture_output=True, text=True
    ).stdout.split()
    return out[0], float(out[1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--number", type=int, default=20, help="calls per timing repeat")
    args = ap.parse_args(argv)

    if _core is None:
        print("compiled extension not built; only the numpy backend is available")
    print(f"{'kernel':<24}{'python (us)':>14}{'cython (us)':>14}{'speedup':>10}")
    for name, fn in kernel_cases(np.random.default_rng(0)).items():
        py = best(lambda: fn(_fallback), args.number) * 1e6
        if _core is None:
            print(f"{name:<24}{py:>14.1f}{'-':>14}{'-':>10}")
            continue
        cy = best(lambda: fn(_core), args.number) * 1e6
        print(f"{name:<24}{py:>14.1f}{cy:>14.1f}{py / cy:>9.1f}x")

    times = dict(step_time(pure, max(1, args.number // 4)) for pure in (True, False))
    py = times.get("python", float("nan")) * 1e3
    cy = times.get("cython", float("nan")) * 1e3
    print(f"{'otmdr step 2-64-64-2 K=2':<24}{py:>11.2f} ms{cy:>11.2f} ms{py / cy:>9.2f}x")


if __name__ == "__main__":
    main()

"""2-D loss-landscape slices and a first-order sharpness probe."""

from __future__ import annotations

import csv
import dataclasses

import numpy as np

from otmdr.metrics import PROB_CLAMP
from otmdr.perturb import EnsembleState, ascent_step, ensemble_predict
from otmdr.rng import RngStream
from otmdr.tensor import ParamVector, evaluate_loss, loss_and_gradient


@dataclasses.dataclass
class LandscapeGrid:
    alphas: np.ndarray
    betas: np.ndarray
    losses: np.ndarray
    dir1: ParamVector | list[ParamVector]
    dir2: ParamVector | list[ParamVector]

    def rows(self):
        for i, a in enumerate(self.alphas):
            for j, b in enumerate(self.betas):
                yield float(a), float(b), float(self.losses[i, j])


def _normalize_segments(d: ParamVector, ref: ParamVector) -> ParamVector:
    def scale(name):
        dn = float(np.linalg.norm(d[name]))
        rn = float(np.linalg.norm(ref[name]))
        return d[name] * (rn / dn) if dn > 0 else np.zeros_like(d[name])

    return ParamVector({k: scale(k) for k in d.names})


def random_directions(params: ParamVector, rng: RngStream) -> tuple[ParamVector, ParamVector]:
    """Two Gaussian directions with per-segment norms matched to ``params``.

    The second direction is then orthogonalized against the first in flat
    space, which changes its segment norms.
    """
    d1 = _normalize_segments(params.unflatten(rng.derive(purpose="landscape/d1").normal(params.total_len)), params)
    d2 = _normalize_segments(params.unflatten(rng.derive(purpose="landscape/d2").normal(params.total_len)), params)
    f1, f2 = d1.flatten(), d2.flatten()
    denom = float(np.dot(f1, f1))
    if denom > 0:
        f2 = f2 - (float(np.dot(f1, f2)) / denom) * f1
    return d1, params.unflatten(f2)


def _coords(half_range: float, steps: int) -> np.ndarray:
    if steps < 3 or steps % 2 == 0:
        raise ValueError("steps must be odd and >= 3")
    mid = (steps - 1) // 2
    return half_range * (np.arange(steps) - mid) / mid


def ensemble_nll(state: EnsembleState, model, ds) -> float:
    p = ensemble_predict(state, model, ds.inputs)
    return float(np.mean(-np.log(np.maximum(p[np.arange(len(ds)), ds.labels], PROB_CLAMP))))


def loss_grid(params, model, ds, d1, d2, half_range: float = 1.0, steps: int = 41) -> LandscapeGrid:
    """Full-dataset loss at ``theta + alpha d1 + beta d2`` on a centered square grid.

    ``params`` may be an :class:`EnsembleState` with per-member direction
    lists; every member is shifted by the same coefficients and the loss is
    the NLL of the averaged prediction.
    """
    alphas = _coords(half_range, steps)
    betas = alphas.copy()
    losses = np.empty((steps, steps))
    batch = ds.as_batch()
    for i, a in enumerate(alphas):
        for j, b in enumerate(betas):
            if isinstance(params, EnsembleState):
                moved = EnsembleState([m + u * a + v * b for m, u, v in zip(params.members, d1, d2)])
                losses[i, j] = ensemble_nll(moved, model, ds)
            else:
                losses[i, j] = evaluate_loss(params + d1 * a + d2 * b, model, batch)
    return LandscapeGrid(alphas, betas, losses, d1, d2)


def ensemble_directions(state: EnsembleState, rng: RngStream):
    pairs = [random_directions(m, rng.derive(member=i)) for i, m in enumerate(state.members)]
    return [p[0] for p in pairs], [p[1] for p in pairs]


def write_csv(grid: LandscapeGrid, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["alpha", "beta", "loss"])
        for a, b, loss in grid.rows():
            w.writerow([f"{a:.17g}", f"{b:.17g}", f"{loss:.17g}"])


def sharpness_probe(params: ParamVector, model, ds, rho: float) -> float:
    """``L(theta + rho g/||g||) - L(theta)`` on the full dataset; 0 at a zero gradient."""
    if not rho > 0:
        raise ValueError("rho must be > 0")
    batch = ds.as_batch() if hasattr(ds, "as_batch") else ds
    base, g = loss_and_gradient(params, model, batch)
    if g.norm() < 1e-12:
        return 0.0
    return evaluate_loss(ascent_step(params, g, rho), model, batch) - base

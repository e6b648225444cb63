"""Brute-force checks on 1-D and 2-D toy losses.

Exhaustive ball maximization, the first-order (SAM) ascent point, the Gibbs
conditional ``exp(lambda L) / Z`` on the ball, and a two-step noisy ascent
chain that should land near that density's mode.
"""

from __future__ import annotations

import dataclasses
from collections.abc import Callable

import numpy as np

from otmdr.rng import RngStream
from otmdr.tensor import ParamVector

GRAD_FLOOR = 1e-12
_BALL_SLACK = 1e-12


@dataclasses.dataclass(frozen=True)
class ToyLoss:
    """Low-dimensional loss evaluated on rows of a ``(n, d)`` array.

    kinds: ``quadratic`` (scale * ||t||^2), ``sine`` (sum sin t_i), ``rosenbrock``
    ((a - x)^2 + b (y - x^2)^2), ``linear`` (coef . t), ``table`` (1-D linear
    interpolation of ``xs``/``ys``) and ``custom`` (vectorized ``fn``).
    """

    kind: str
    scale: float = 1.0
    a: float = 1.0
    b: float = 100.0
    coef: tuple[float, ...] = ()
    xs: tuple[float, ...] = ()
    ys: tuple[float, ...] = ()
    fn: Callable | None = None

    def __call__(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if self.kind == "quadratic":
            return self.scale * np.sum(p * p, axis=1)
        if self.kind == "sine":
            return np.sum(np.sin(p), axis=1)
        if self.kind == "rosenbrock":
            x, y = p[:, 0], p[:, 1]
            return (self.a - x) ** 2 + self.b * (y - x * x) ** 2
        if self.kind == "linear":
            return p @ np.asarray(self.coef, dtype=np.float64)
        if self.kind == "table":
            return np.interp(p[:, 0], self.xs, self.ys)
        if self.kind == "custom":
            return np.asarray(self.fn(p), dtype=np.float64)
        raise ValueError(f"unknown toy loss kind {self.kind!r}")

    def value(self, point) -> float:
        return float(self(np.asarray(point, dtype=np.float64).reshape(1, -1))[0])

    def grad(self, point) -> np.ndarray:
        t = np.asarray(point, dtype=np.float64).ravel()
        if self.kind == "quadratic":
            return 2.0 * self.scale * t
        if self.kind == "sine":
            return np.cos(t)
        if self.kind == "rosenbrock":
            x, y = t
            return np.array([-2.0 * (self.a - x) - 4.0 * self.b * x * (y - x * x), 2.0 * self.b * (y - x * x)])
        if self.kind == "linear":
            return np.asarray(self.coef, dtype=np.float64).copy()
        return _central_diff(self, t)


def _central_diff(loss, t, h=1e-6):
    g = np.empty_like(t)
    for i in range(t.size):
        step = h * (1.0 + abs(t[i]))
        up, down = t.copy(), t.copy()
        up[i] += step
        down[i] -= step
        g[i] = (loss.value(up) - loss.value(down)) / (2 * step)
    return g


def _as_center(center) -> np.ndarray:
    c = center.flatten() if isinstance(center, ParamVector) else np.asarray(center, dtype=np.float64).ravel()
    if not 1 <= c.size <= 2:
        raise ValueError(f"oracle grids support 1 or 2 dimensions, got {c.size}")
    return c


@dataclasses.dataclass
class BallGrid:
    axes: list[np.ndarray]
    points: np.ndarray  # (n, d) points inside the ball, lexicographic order
    weights: np.ndarray  # trapezoidal quadrature weights of those points
    spacing: float


def ball_grid(center, rho: float, resolution: int) -> BallGrid:
    """Regular grid on the bounding box of the ball, restricted to the ball.

    Axis ``i`` is ``center_i + rho * (j - m) / m`` for ``j = 0..resolution-1``
    with ``m = (resolution - 1) / 2``, so the center is a grid point whenever
    the resolution is odd.
    """
    c = _as_center(center)
    if resolution < 3:
        raise ValueError("resolution must be >= 3")
    m = (resolution - 1) / 2.0
    offsets = rho * (np.arange(resolution) - m) / m
    axes = [ci + offsets for ci in c]
    spacing = rho / m
    w1 = np.full(resolution, spacing)
    w1[0] = w1[-1] = spacing / 2.0
    if c.size == 1:
        pts = axes[0][:, None]
        w = w1.copy()
        off2 = offsets[:, None] ** 2
    else:
        gx, gy = np.meshgrid(axes[0], axes[1], indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
        w = np.outer(w1, w1).ravel()
        ox, oy = np.meshgrid(offsets, offsets, indexing="ij")
        off2 = np.stack([ox.ravel() ** 2, oy.ravel() ** 2], axis=1)
    inside = np.sqrt(off2.sum(axis=1)) <= rho * (1.0 + _BALL_SLACK)
    return BallGrid(axes, pts[inside], w[inside], spacing)


@dataclasses.dataclass
class WorstCase:
    point: np.ndarray
    loss: float


def grid_worst_case(loss: ToyLoss, center, rho: float, resolution: int = 201) -> WorstCase:
    """Exhaustive max of ``loss`` over grid points of the ball; ties go to the lexicographically smallest point."""
    g = ball_grid(center, rho, resolution)
    vals = loss(g.points)
    i = int(np.argmax(vals))
    return WorstCase(g.points[i].copy(), float(vals[i]))


def sam_first_order_worst(loss: ToyLoss, center, rho: float) -> WorstCase:
    """``center + rho * grad / ||grad||``; the center itself when the gradient vanishes."""
    c = _as_center(center)
    g = loss.grad(c)
    n = float(np.linalg.norm(g))
    point = c.copy() if n < GRAD_FLOOR else c + rho * g / n
    return WorstCase(point, loss.value(point))


def grid_lipschitz_slack(loss: ToyLoss, center, rho: float, resolution: int = 201) -> float:
    """Largest gradient norm on the grid times half a cell diagonal."""
    g = ball_grid(center, rho, resolution)
    gmax = max(float(np.linalg.norm(loss.grad(p))) for p in g.points)
    return gmax * g.spacing * np.sqrt(g.points.shape[1]) / 2.0


@dataclasses.dataclass
class GibbsSpec:
    center: np.ndarray
    rho: float
    lam: float
    resolution: int = 201

    def __post_init__(self):
        self.center = _as_center(self.center)
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")


@dataclasses.dataclass
class GibbsDensity:
    points: np.ndarray
    density: np.ndarray
    weights: np.ndarray
    log_normalizer: float
    spacing: float

    @property
    def normalizer(self) -> float:
        return float(np.exp(self.log_normalizer))

    @property
    def mass(self) -> float:
        return float(np.sum(self.weights * self.density))

    def argmax(self) -> np.ndarray:
        return self.points[int(np.argmax(self.density))].copy()

    def density_at(self, point) -> float:
        d = np.abs(self.points - np.asarray(point, dtype=np.float64).reshape(1, -1)).max(axis=1)
        return float(self.density[int(np.argmin(d))])

    def mass_near(self, point, cells: int = 2) -> float:
        d = np.abs(self.points - np.asarray(point, dtype=np.float64).reshape(1, -1)).max(axis=1)
        near = d <= cells * self.spacing * (1.0 + 1e-9)
        return float(np.sum(self.weights[near] * self.density[near]))


def gibbs_density_grid(spec: GibbsSpec, loss: ToyLoss) -> GibbsDensity:
    """Gibbs conditional ``exp(lam * L) / Z`` on the ball grid, Z by trapezoidal quadrature."""
    g = ball_grid(spec.center, spec.rho, spec.resolution)
    a = spec.lam * loss(g.points)
    top = float(a.max())
    u = np.exp(a - top)
    z_shifted = float(np.sum(g.weights * u))
    return GibbsDensity(g.points, u / z_shifted, g.weights, top + float(np.log(z_shifted)), g.spacing)


@dataclasses.dataclass
class ModeReport:
    fraction_near_mode: float
    mean_terminal_loss: float
    ball_max_loss: float
    mode: np.ndarray
    terminals: np.ndarray


def _ascent(p, g, rho):
    n = float(np.linalg.norm(g))
    return p.copy() if (rho == 0 or n < GRAD_FLOOR) else p + rho * g / n


def sgld_mode_check(
    spec: GibbsSpec,
    loss: ToyLoss,
    trials: int,
    rng: RngStream,
    noise_std: float = 1e-4,
    rho1: float | None = None,
    rho2: float | None = None,
    cells: int = 2,
) -> ModeReport:
    """Run the two-step noisy normalized ascent chain ``trials`` times from the center.

    Radii default to ``rho / 2`` each so that the chain can reach the ball's
    boundary. Terminal points are projected back onto the ball, which is the
    support of the Gibbs conditional.
    """
    r1 = spec.rho / 2.0 if rho1 is None else rho1
    r2 = spec.rho / 2.0 if rho2 is None else rho2
    c = spec.center
    dens = gibbs_density_grid(spec, loss)
    mode = dens.argmax()
    worst = grid_worst_case(loss, c, spec.rho, spec.resolution)
    terminals = np.empty((trials, c.size))
    for i in range(trials):
        lane = rng.derive(particle=i, purpose="sgld_mode")
        p = _ascent(c, loss.grad(c), r1)
        if noise_std:
            p = p + lane.normal(c.size, std=noise_std)
        p = _ascent(p, loss.grad(p), r2)
        if noise_std:
            p = p + lane.normal(c.size, std=noise_std)
        off = p - c
        r = float(np.linalg.norm(off))
        if r > spec.rho:
            p = c + off * (spec.rho / r)
        terminals[i] = p
    near = np.abs(terminals - mode[None, :]).max(axis=1) <= cells * dens.spacing * (1.0 + 1e-9)
    return ModeReport(
        fraction_near_mode=float(near.mean()),
        mean_terminal_loss=float(np.mean(loss(terminals))),
        ball_max_loss=worst.loss,
        mode=mode,
        terminals=terminals,
    )

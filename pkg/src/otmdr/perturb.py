"""SGD, SAM and the OT-MDR particle optimizers (single model, ensemble, BNN).

An OT-MDR step draws ``K`` particles. Each particle takes two noisy,
normalized gradient-ascent sub-steps, the first on a random half of the
batch and the second on the other half. The descent gradient is then
averaged over the particles on the full batch. Perturbations are treated as
constants with respect to ``theta`` (no second-order terms).
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from otmdr.data import Batch
from otmdr.errors import NonFiniteError
from otmdr.nn import NoiseDraw, VariationalParams, draw_noise, softmax
from otmdr.rng import RngStream
from otmdr.tensor import ParamVector, gradient
from otmdr import nn

VARIANTS = ("sgd", "sam", "otmdr_single", "otmdr_ensemble", "otmdr_bnn")
NOISE_MODES = ("fixed", "paper_eq9")
GRAD_FLOOR = 1e-12

DEFAULT_RHO1 = 0.05
DEFAULT_BNN_RHO1 = 0.005
DEFAULT_BNN_RHO2 = 0.01
DEFAULT_NOISE_STD = 1e-4


@dataclasses.dataclass
class PerturbConfig:
    """Perturbation hyperparameters.

    ``rho2`` defaults to ``2 * rho1``. ``noise_std`` is the standard deviation
    of the fixed-mode ascent noise; in ``paper_eq9`` mode each sub-step uses
    covariance ``rho * I`` with that sub-step's own radius. ``split=False``
    feeds the whole batch to both ascent sub-steps.
    """

    rho1: float = DEFAULT_RHO1
    rho2: float | None = None
    K: int = 1
    noise_std: float = DEFAULT_NOISE_STD
    noise_mode: str = "fixed"
    lr: float = 0.05
    variant: str = "otmdr_single"
    kl_weight: float = 0.0
    split: bool = True

    def __post_init__(self):
        if self.rho2 is None:
            self.rho2 = 2.0 * self.rho1
        if not self.rho1 > 0:
            raise ValueError("rho1 must be > 0")
        if self.rho2 < 0:
            raise ValueError("rho2 must be >= 0")
        if int(self.K) != self.K or self.K < 1:
            raise ValueError("K must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be >= 0")

    def noise_scale(self, rho: float) -> float:
        return math.sqrt(rho) if self.noise_mode == "paper_eq9" else self.noise_std


@dataclasses.dataclass(frozen=True)
class SplitBatch:
    first: Batch
    second: Batch


@dataclasses.dataclass
class Particle:
    theta_tilde: ParamVector
    intermediate: ParamVector
    split_id: int
    split: SplitBatch
    noise_norms: tuple[float, float] = (0.0, 0.0)


@dataclasses.dataclass
class EnsembleState:
    members: list[ParamVector]

    def __len__(self):
        return len(self.members)


def split_batch(batch: Batch, rng_stream: RngStream) -> SplitBatch:
    """Random halves of sizes ceil(n/2), floor(n/2); rows keep their batch order."""
    n = len(batch)
    if n < 2:
        raise ValueError("batch too small to split")
    perm = rng_stream.permutation(n)
    half = (n + 1) // 2
    return SplitBatch(batch.subset(np.sort(perm[:half])), batch.subset(np.sort(perm[half:])))


def ascent_step(theta: ParamVector, grad: ParamVector, rho: float, noise: ParamVector | None = None) -> ParamVector:
    """``theta + rho * grad / ||grad|| + noise``; the gradient term is dropped when ||grad|| < 1e-12."""
    if not grad.all_finite():
        raise NonFiniteError("non-finite gradient in ascent step")
    out = theta
    gnorm = grad.norm()
    if rho != 0 and gnorm >= GRAD_FLOOR:
        out = out + grad * (rho / gnorm)
    if noise is not None:
        out = out + noise
    return out.copy() if out is theta else out


def _draw_ascent_noise(like: ParamVector, cfg: PerturbConfig, rho: float, rng: RngStream) -> ParamVector | None:
    std = cfg.noise_scale(rho)
    if std == 0:
        return None
    return like.unflatten(rng.normal(like.total_len, std=std))


def _two_step_particle(center, model, batch, cfg, rng, k, offset=None) -> Particle:
    """One particle's ascent chain around ``center``.

    With ``offset`` the loss is evaluated at ``point + offset`` while only
    ``point`` moves (the BNN case, where ``offset = sigma * kappa``).
    """
    lane = rng.derive(particle=k, purpose="split")
    split = split_batch(batch, lane) if cfg.split else SplitBatch(batch, batch)

    def grad_at(point, b):
        return gradient(point if offset is None else point + offset, model, b)

    eps1 = _draw_ascent_noise(center, cfg, cfg.rho1, rng.derive(particle=k, purpose="noise1"))
    mid = ascent_step(center, grad_at(center, split.first), cfg.rho1, eps1)
    eps2 = _draw_ascent_noise(center, cfg, cfg.rho2, rng.derive(particle=k, purpose="noise2"))
    end = ascent_step(mid, grad_at(mid, split.second), cfg.rho2, eps2)
    norms = (eps1.norm() if eps1 is not None else 0.0, eps2.norm() if eps2 is not None else 0.0)
    return Particle(end, mid, k, split, norms)


def otmdr_particles(theta: ParamVector, model, batch: Batch, cfg: PerturbConfig, rng: RngStream) -> list[Particle]:
    return [_two_step_particle(theta, model, batch, cfg, rng, k) for k in range(cfg.K)]


def _mean_descent_direction(points, model, batch) -> ParamVector:
    total = None
    for p in points:
        g = gradient(p, model, batch)
        total = g if total is None else total + g
    return total


def otmdr_update(theta: ParamVector, model, batch: Batch, cfg: PerturbConfig, rng: RngStream) -> ParamVector:
    """``theta - (lr/K) * sum_k grad L_B(particle_k)``, particles reduced in index order."""
    particles = otmdr_particles(theta, model, batch, cfg, rng)
    total = _mean_descent_direction([p.theta_tilde for p in particles], model, batch)
    return theta - total * (cfg.lr / cfg.K)


def sam_update(theta: ParamVector, model, batch: Batch, rho: float, lr: float) -> ParamVector:
    adv = ascent_step(theta, gradient(theta, model, batch), rho)
    return theta - gradient(adv, model, batch) * lr


def sgd_update(theta: ParamVector, model, batch: Batch, lr: float) -> ParamVector:
    return theta - gradient(theta, model, batch) * lr


def ensemble_otmdr_update(state: EnsembleState, model, batch: Batch, cfg: PerturbConfig, rng: RngStream) -> EnsembleState:
    """Independent OT-MDR steps per member, member ``m`` on lane ``member=m``."""
    return EnsembleState(
        [otmdr_update(theta, model, batch, cfg, rng.derive(member=m)) for m, theta in enumerate(state.members)]
    )


def bnn_otmdr_update(
    v: VariationalParams, model, batch: Batch, cfg: PerturbConfig, rng: RngStream, trace: dict | None = None
) -> VariationalParams:
    """OT-MDR step for a mean-field Gaussian posterior.

    One kappa draw per call is shared by every particle and both ascent
    sub-steps. Only the means are perturbed. The mean moves along the particle
    average. The log-scale moves along the chain-ruled gradient at the
    unperturbed sample ``mu + sigma * kappa``. ``cfg.kl_weight`` adds the
    gradient of ``beta * KL(q || N(0, I))`` to both steps.

    ``trace``, when given, receives the kappa draw count, the draw itself and
    the particles, for instrumentation.
    """
    noise = draw_noise(v.mu, rng.derive(purpose="kappa"))
    sigma = v.sigma
    offset = sigma.zip_map(noise.kappa, np.multiply)
    particles = [_two_step_particle(v.mu, model, batch, cfg, rng, k, offset=offset) for k in range(cfg.K)]
    samples = [p.theta_tilde + offset for p in particles]
    mu_dir = _mean_descent_direction(samples, model, batch) * (1.0 / cfg.K)
    g_theta = gradient(v.mu + offset, model, batch)
    log_sigma_dir = sigma.zip_map(g_theta.zip_map(noise.kappa, np.multiply), np.multiply)
    if cfg.kl_weight:
        mu_dir = mu_dir + v.mu * cfg.kl_weight
        log_sigma_dir = log_sigma_dir + sigma.map(lambda s: s * s - 1.0) * cfg.kl_weight
    if trace is not None:
        trace["kappa_draws"] = trace.get("kappa_draws", 0) + 1
        trace.setdefault("kappa", []).append(noise)
        trace.setdefault("particles", []).append(particles)
        trace.setdefault("samples", []).append(samples)
        trace.setdefault("offset", []).append(offset)
    return VariationalParams(v.mu - mu_dir * cfg.lr, v.log_sigma - log_sigma_dir * cfg.lr)


def ensemble_predict(state: EnsembleState, model, inputs) -> np.ndarray:
    """Mean of member softmax probabilities, accumulated in member order."""
    if len(state.members) < 1:
        raise ValueError("ensemble needs at least one member")
    total = None
    for theta in state.members:
        p = softmax(nn.forward_logits(theta, model, inputs))
        total = p if total is None else total + p
    return total / len(state.members)


def bnn_predict(v: VariationalParams, model, inputs, rng: RngStream, samples: int) -> np.ndarray:
    """Monte-Carlo predictive: mean softmax over ``samples`` reparameterized draws."""
    total = None
    for s in range(samples):
        theta = nn.reparam_sample(v, draw_noise(v.mu, rng.derive(particle=s, purpose="predict")))
        p = softmax(nn.forward_logits(theta, model, inputs))
        total = p if total is None else total + p
    return total / samples


__all__ = [
    "VARIANTS",
    "PerturbConfig",
    "SplitBatch",
    "Particle",
    "EnsembleState",
    "NoiseDraw",
    "split_batch",
    "ascent_step",
    "otmdr_particles",
    "otmdr_update",
    "sam_update",
    "sgd_update",
    "ensemble_otmdr_update",
    "bnn_otmdr_update",
    "ensemble_predict",
    "bnn_predict",
]

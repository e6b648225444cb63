"""Accuracy, NLL, Brier, ECE, AAC and temperature scaling.

AAC here is the mean (calibrated) top-class confidence on misclassified
samples, 0 when every sample is correct. Lower is better.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from otmdr import kernels

PROB_CLAMP = 1e-12
SIMPLEX_TOL = 1e-9
DEFAULT_BINS = 15
T_BOUNDS = (0.05, 10.0)
T_TOL = 1e-4


@dataclasses.dataclass
class MetricsRecord:
    acc: float
    nll: float
    brier: float
    ece: float
    aac: float
    temperature: float | None = None
    ece_raw: float | None = None
    ece_calibrated: float | None = None

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def _check_simplex(probs: np.ndarray):
    if probs.ndim != 2 or probs.shape[0] < 1:
        raise ValueError(f"probs must be a non-empty (n, C) array, got shape {probs.shape}")
    bad = np.flatnonzero((np.abs(probs.sum(axis=1) - 1.0) > SIMPLEX_TOL) | (probs.min(axis=1) < -SIMPLEX_TOL))
    if bad.size:
        raise ValueError(f"row {bad[0]} is not on the probability simplex")


def _mean(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    return kernels.pairwise_sum(values) / values.size


def expected_calibration_error(probs, labels, n_bins: int = DEFAULT_BINS) -> float:
    """Equal-width bins over (0, 1] on top-class confidence; empty bins skipped."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    conf = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == labels).astype(np.float64)
    bins = np.clip(np.ceil(conf * n_bins).astype(np.int_) - 1, 0, n_bins - 1)
    n = conf.size
    ece = 0.0
    for b in range(n_bins):
        sel = bins == b
        nb = int(sel.sum())
        if nb == 0:
            continue
        ece += (nb / n) * abs(_mean(correct[sel]) - _mean(conf[sel]))
    return ece


def compute_metrics(probs, labels, n_bins: int = DEFAULT_BINS) -> MetricsRecord:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int_)
    _check_simplex(probs)
    n = probs.shape[0]
    rows = np.arange(n)
    pred = probs.argmax(axis=1)  # first maximum, i.e. lowest class id on ties
    correct = pred == labels
    nll = _mean(-np.log(np.maximum(probs[rows, labels], PROB_CLAMP)))
    onehot = np.zeros_like(probs)
    onehot[rows, labels] = 1.0
    brier = _mean(((probs - onehot) ** 2).sum(axis=1))
    ece = expected_calibration_error(probs, labels, n_bins)
    wrong = ~correct
    aac = _mean(probs.max(axis=1)[wrong]) if wrong.any() else 0.0
    return MetricsRecord(
        acc=int(correct.sum()) / n, nll=nll, brier=brier, ece=ece, aac=aac, ece_raw=ece,
    )


def nll_at_temperature(logits, labels, t: float) -> float:
    losses, _ = kernels.softmax_xent(np.asarray(logits, dtype=np.float64) / t, np.asarray(labels, dtype=np.int_))
    return kernels.pairwise_sum(losses) / losses.size


def temperature_scale(logits, labels, bounds=T_BOUNDS, tol=T_TOL) -> float:
    """Golden-section minimizer of NLL(T) over ``bounds``.

    NLL is convex in 1/T, hence unimodal in T. If the located point is no
    better than T=1 (possible only at rounding level), 1 is returned.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int_)
    if logits.shape[0] < 2:
        raise ValueError("temperature scaling needs at least 2 samples")
    f = lambda t: nll_at_temperature(logits, labels, t)  # noqa: E731
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = bounds
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    t = (a + b) / 2.0
    if bounds[0] <= 1.0 <= bounds[1] and f(t) > f(1.0):
        return 1.0
    return t


def calibrated_metrics(fit_logits, fit_labels, eval_logits, eval_labels, n_bins: int = DEFAULT_BINS) -> MetricsRecord:
    """Fit T on one split, score the other raw, and again at T.

    acc/nll/brier/ece/aac are the calibrated values. ``ece_raw`` is taken at
    T = 1.
    """
    t = temperature_scale(fit_logits, fit_labels)
    eval_logits = np.asarray(eval_logits, dtype=np.float64)
    raw = compute_metrics(_softmax(eval_logits), eval_labels, n_bins)
    rec = compute_metrics(_softmax(eval_logits / t), eval_labels, n_bins)
    rec.temperature = t
    rec.ece_raw = raw.ece
    rec.ece_calibrated = rec.ece
    return rec


def _softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def probs_to_logits(probs) -> np.ndarray:
    """Log-probabilities, usable as logits for ensemble / MC predictives."""
    return np.log(np.maximum(np.asarray(probs, dtype=np.float64), PROB_CLAMP))

"""Run configuration: ``key = value`` lines with ``#`` comments."""

from __future__ import annotations

import dataclasses
from pathlib import Path

from otmdr.errors import ConfigSyntaxError, MissingKeyError, OutOfRangeError, UnknownKeyError
from otmdr.perturb import (
    DEFAULT_BNN_RHO1,
    DEFAULT_NOISE_STD,
    DEFAULT_RHO1,
    NOISE_MODES,
    VARIANTS,
    PerturbConfig,
)

DATASETS = ("two_moons", "mnist")


@dataclasses.dataclass
class RunConfig:
    variant: str
    dataset: str
    data_dir: str = ""
    n_train: int = 2000
    n_test: int = 1000
    moons_noise: float = 0.2
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "relu"
    epochs: int = 60
    batch_size: int = 64
    lr: float = 0.05
    lr_schedule: str = "constant"
    rho1: float | None = None
    rho2: float | None = None
    K: int = 1
    M: int = 1
    noise_std: float = DEFAULT_NOISE_STD
    noise_mode: str = "fixed"
    kl_weight: float | None = None
    seed: int = 0
    out_dir: str = "runs/out"
    n_bins: int = 15
    calib_fraction: float = 0.1
    sharpness_rho: float = 0.05
    bnn_samples: int = 8
    wall_clock: bool = False
    sweep_K: tuple[int, ...] = (1, 2, 3, 4)
    landscape_steps: int = 41
    landscape_half_range: float = 1.0

    def __post_init__(self):
        if self.rho1 is None:
            self.rho1 = DEFAULT_BNN_RHO1 if self.variant == "otmdr_bnn" else DEFAULT_RHO1
        if self.rho2 is None:
            self.rho2 = 2.0 * self.rho1
        if self.kl_weight is None:
            self.kl_weight = 1.0 / self.n_train

    def perturb_config(self, lr: float | None = None) -> PerturbConfig:
        return PerturbConfig(
            rho1=self.rho1,
            rho2=self.rho2,
            K=self.K,
            noise_std=self.noise_std,
            noise_mode=self.noise_mode,
            lr=self.lr if lr is None else lr,
            variant=self.variant,
            kl_weight=self.kl_weight if self.variant == "otmdr_bnn" else 0.0,
        )

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)


REQUIRED = ("variant", "dataset")


def _int_list(text):
    text = text.strip()
    return tuple(int(t) for t in text.split(",") if t.strip()) if text else ()


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_PARSERS = {
    "variant": str,
    "dataset": str,
    "data_dir": str,
    "n_train": int,
    "n_test": int,
    "moons_noise": float,
    "hidden": _int_list,
    "activation": str,
    "epochs": int,
    "batch_size": int,
    "lr": float,
    "lr_schedule": str,
    "rho1": float,
    "rho2": float,
    "K": int,
    "M": int,
    "noise_std": float,
    "noise_mode": str,
    "kl_weight": float,
    "seed": int,
    "out_dir": str,
    "n_bins": int,
    "calib_fraction": float,
    "sharpness_rho": float,
    "bnn_samples": int,
    "wall_clock": _bool,
    "sweep_K": _int_list,
    "landscape_steps": int,
    "landscape_half_range": float,
}

# key -> (predicate, message)
_CHECKS = {
    "variant": (lambda v: v in VARIANTS, f"variant must be one of {', '.join(VARIANTS)}"),
    "dataset": (lambda v: v in DATASETS, f"dataset must be one of {', '.join(DATASETS)}"),
    "n_train": (lambda v: v >= 2, "n_train must be ≥ 2"),
    "n_test": (lambda v: v >= 2, "n_test must be ≥ 2"),
    "moons_noise": (lambda v: v >= 0, "moons_noise must be ≥ 0"),
    "hidden": (lambda v: all(h >= 1 for h in v), "hidden sizes must be ≥ 1"),
    "activation": (lambda v: v in ("relu", "tanh"), "activation must be relu or tanh"),
    "epochs": (lambda v: v >= 1, "epochs must be ≥ 1"),
    "batch_size": (lambda v: v >= 2, "batch_size must be ≥ 2"),
    "lr": (lambda v: v > 0, "lr must be > 0"),
    "lr_schedule": (lambda v: v in ("constant", "cosine"), "lr_schedule must be constant or cosine"),
    "rho1": (lambda v: v > 0, "rho1 must be > 0"),
    "rho2": (lambda v: v >= 0, "rho2 must be ≥ 0"),
    "K": (lambda v: v >= 1, "K must be ≥ 1"),
    "M": (lambda v: v >= 1, "M must be ≥ 1"),
    "noise_std": (lambda v: v >= 0, "noise_std must be ≥ 0"),
    "noise_mode": (lambda v: v in NOISE_MODES, f"noise_mode must be one of {', '.join(NOISE_MODES)}"),
    "kl_weight": (lambda v: v >= 0, "kl_weight must be ≥ 0"),
    "n_bins": (lambda v: v >= 1, "n_bins must be ≥ 1"),
    "calib_fraction": (lambda v: 0 < v < 1, "calib_fraction must be in (0, 1)"),
    "sharpness_rho": (lambda v: v > 0, "sharpness_rho must be > 0"),
    "bnn_samples": (lambda v: v >= 1, "bnn_samples must be ≥ 1"),
    "sweep_K": (lambda v: len(v) >= 1 and all(k >= 1 for k in v), "sweep_K entries must be ≥ 1"),
    "landscape_steps": (lambda v: v >= 3 and v % 2 == 1, "landscape_steps must be odd and ≥ 3"),
    "landscape_half_range": (lambda v: v > 0, "landscape_half_range must be > 0"),
}


def parse_config_text(text: str) -> RunConfig:
    values, lines = {}, {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigSyntaxError("expected 'key = value'", line=lineno)
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in _PARSERS:
            raise UnknownKeyError(f"unknown key {key!r}", key=key, line=lineno)
        if key in values:
            raise ConfigSyntaxError(f"duplicate key {key!r}", key=key, line=lineno)
        try:
            parsed = _PARSERS[key](value)
        except ValueError as exc:
            raise OutOfRangeError(f"cannot parse {key} = {value!r}: {exc}", key=key, line=lineno) from None
        check = _CHECKS.get(key)
        if check and not check[0](parsed):
            raise OutOfRangeError(check[1], key=key, line=lineno)
        values[key] = parsed
        lines[key] = lineno
    for key in REQUIRED:
        if key not in values:
            raise MissingKeyError(f"missing required key {key!r}", key=key)
    cfg = RunConfig(**values)
    if cfg.dataset == "mnist" and not cfg.data_dir:
        raise MissingKeyError("dataset = mnist needs data_dir", key="data_dir", line=lines.get("dataset"))
    if cfg.batch_size > cfg.n_train and cfg.dataset == "two_moons":
        raise OutOfRangeError("batch_size must be ≤ n_train", key="batch_size", line=lines.get("batch_size"))
    return cfg


def parse_config(path) -> RunConfig:
    return parse_config_text(Path(path).read_text())


def format_config(cfg: RunConfig) -> str:
    """Inverse of :func:`parse_config_text` for every field."""
    out = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        out.append(f"{f.name} = {v}")
    return "\n".join(out) + "\n"

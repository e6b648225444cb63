"""Run orchestration: train, eval, verify, landscape and the K sweep.

Every random choice comes from an :class:`RngStream` lane derived from the
run seed, so a run is a pure function of its config.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from pathlib import Path

import numpy as np

from otmdr import landscape as ls
from otmdr import oracle
from otmdr.checkpoint import load_checkpoint, save_checkpoint
from otmdr.config import RunConfig, format_config
from otmdr.data import batches, load_mnist_dir, make_two_moons, stratified_split
from otmdr.errors import NonFiniteError
from otmdr.metrics import calibrated_metrics, probs_to_logits
from otmdr.nn import ModelSpec, VariationalParams, forward_logits, init_params, init_variational
from otmdr.perturb import (
    EnsembleState,
    PerturbConfig,
    bnn_otmdr_update,
    bnn_predict,
    ensemble_otmdr_update,
    ensemble_predict,
    otmdr_update,
    sam_update,
    sgd_update,
)
from otmdr.rng import RngStream, lane_key
from otmdr.tensor import evaluate_loss

METRIC_FIELDS = (
    "epoch",
    "train_loss",
    "acc",
    "nll",
    "brier",
    "ece_raw",
    "ece_calibrated",
    "aac",
    "temperature",
    "sharpness",
    "wall_ms",
)


def _derived_seed(seed: int, purpose: str) -> int:
    return lane_key(seed, 0, 0, 0, 0, purpose)


def build_data(cfg: RunConfig):
    if cfg.dataset == "two_moons":
        train = make_two_moons(cfg.n_train, cfg.moons_noise, _derived_seed(cfg.seed, "data/train"))
        test = make_two_moons(cfg.n_test, cfg.moons_noise, _derived_seed(cfg.seed, "data/test"))
        return train, test
    return load_mnist_dir(cfg.data_dir)


def build_model(cfg: RunConfig, train) -> ModelSpec:
    return ModelSpec((train.inputs.shape[1], *cfg.hidden, train.n_classes), cfg.activation)


def init_state(cfg: RunConfig, model: ModelSpec):
    if cfg.variant == "otmdr_ensemble":
        return EnsembleState([init_params(model, _derived_seed(cfg.seed, f"init/member{m}")) for m in range(cfg.M)])
    if cfg.variant == "otmdr_bnn":
        return init_variational(model, cfg.seed)
    return init_params(model, cfg.seed)


def learning_rate(cfg: RunConfig, epoch: int) -> float:
    if cfg.lr_schedule == "cosine":
        return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
    return cfg.lr


def train_step(state, model, batch, pcfg: PerturbConfig, rng: RngStream):
    v = pcfg.variant
    if v == "sgd":
        return sgd_update(state, model, batch, pcfg.lr)
    if v == "sam":
        return sam_update(state, model, batch, pcfg.rho1, pcfg.lr)
    if v == "otmdr_single":
        return otmdr_update(state, model, batch, pcfg, rng)
    if v == "otmdr_ensemble":
        return ensemble_otmdr_update(state, model, batch, pcfg, rng)
    return bnn_otmdr_update(state, model, batch, pcfg, rng)


def batch_loss(state, model, batch) -> float:
    if isinstance(state, EnsembleState):
        return float(np.mean([evaluate_loss(m, model, batch) for m in state.members]))
    if isinstance(state, VariationalParams):
        return evaluate_loss(state.mu, model, batch)
    return evaluate_loss(state, model, batch)


def predict_logits(state, model, inputs, seed: int = 0, bnn_samples: int = 8, epoch: int = 0) -> np.ndarray:
    """Logits of the predictive: raw for one model; log mean-probabilities otherwise."""
    if isinstance(state, EnsembleState):
        return probs_to_logits(ensemble_predict(state, model, inputs))
    if isinstance(state, VariationalParams):
        rng = RngStream(seed, epoch=epoch, purpose="eval")
        return probs_to_logits(bnn_predict(state, model, inputs, rng, bnn_samples))
    return forward_logits(state, model, inputs)


def sharpness(state, model, ds, rho: float) -> float:
    if isinstance(state, EnsembleState):
        return float(np.mean([ls.sharpness_probe(m, model, ds, rho) for m in state.members]))
    if isinstance(state, VariationalParams):
        return ls.sharpness_probe(state.mu, model, ds, rho)
    return ls.sharpness_probe(state, model, ds, rho)


def calibration_rows(cfg: RunConfig, test):
    n_cal = max(2, int(round(cfg.calib_fraction * len(test))))
    return stratified_split(test.labels, n_cal, RngStream(cfg.seed, purpose="calibration"))


def evaluate_state(cfg: RunConfig, state, model, test, epoch: int = 0) -> dict:
    cal, rest = calibration_rows(cfg, test)
    logits = predict_logits(state, model, test.inputs, cfg.seed, cfg.bnn_samples, epoch)
    rec = calibrated_metrics(logits[cal], test.labels[cal], logits[rest], test.labels[rest], cfg.n_bins)
    return {
        "acc": rec.acc,
        "nll": rec.nll,
        "brier": rec.brier,
        "ece_raw": rec.ece_raw,
        "ece_calibrated": rec.ece_calibrated,
        "aac": rec.aac,
        "temperature": rec.temperature,
    }


@dataclasses.dataclass
class TrainResult:
    records: list[dict]
    state: object
    model: ModelSpec
    metrics_path: Path
    checkpoint_path: Path
    train: object
    test: object


def run_train(cfg: RunConfig) -> TrainResult:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, test = build_data(cfg)
    model = build_model(cfg, train)
    state = init_state(cfg, model)
    metrics_path = out / "metrics.jsonl"
    records = []
    with open(metrics_path, "w") as fh:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            pcfg = cfg.perturb_config(lr=learning_rate(cfg, epoch - 1))
            losses = []
            epoch_batches = batches(train, cfg.batch_size, RngStream(cfg.seed, epoch=epoch, purpose="shuffle"))
            for step, batch in enumerate(epoch_batches):
                if len(batch) < 2:
                    continue  # OT-MDR needs two halves; skipped for every variant to keep data order identical
                loss = batch_loss(state, model, batch)
                if not math.isfinite(loss):
                    raise NonFiniteError(f"non-finite training loss at epoch {epoch}, step {step}")
                losses.append(loss)
                state = train_step(state, model, batch, pcfg, RngStream(cfg.seed, epoch=epoch, step=step))
            rec = {"epoch": epoch, "train_loss": float(np.mean(losses))}
            rec.update(evaluate_state(cfg, state, model, test, epoch))
            rec["sharpness"] = sharpness(state, model, train, cfg.sharpness_rho)
            rec["wall_ms"] = round((time.perf_counter() - t0) * 1000.0, 3) if cfg.wall_clock else None
            rec = {k: rec[k] for k in METRIC_FIELDS}
            records.append(rec)
            fh.write(json.dumps(rec) + "\n")
    ckpt = out / "checkpoint.bin"
    save_checkpoint(ckpt, model, state)
    (out / "config.txt").write_text(format_config(cfg))
    return TrainResult(records, state, model, metrics_path, ckpt, train, test)


def run_eval(cfg: RunConfig, checkpoint) -> dict:
    model, state = load_checkpoint(checkpoint)
    train, test = build_data(cfg)
    expected = build_model(cfg, train)
    if expected != model:
        raise ValueError(f"checkpoint model {model.layer_sizes} does not match config {expected.layer_sizes}")
    rec = evaluate_state(cfg, state, model, test)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "eval.json").write_text(json.dumps(rec, sort_keys=True) + "\n")
    return rec


def run_landscape(cfg: RunConfig, checkpoint) -> Path:
    model, state = load_checkpoint(checkpoint)
    train, _ = build_data(cfg)
    if isinstance(state, VariationalParams):
        state = state.mu
    rng = RngStream(cfg.seed, purpose="landscape")
    if isinstance(state, EnsembleState):
        d1, d2 = ls.ensemble_directions(state, rng)
    else:
        d1, d2 = ls.random_directions(state, rng)
    grid = ls.loss_grid(state, model, train, d1, d2, cfg.landscape_half_range, cfg.landscape_steps)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "landscape.csv"
    ls.write_csv(grid, csv_path)
    sidecar = {
        "checkpoint": str(checkpoint),
        "seed": cfg.seed,
        "lane": "landscape",
        "half_range": cfg.landscape_half_range,
        "steps": cfg.landscape_steps,
        "dataset": cfg.dataset,
        "joint_shift": isinstance(state, EnsembleState),
    }
    (out / "landscape.json").write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n")
    return csv_path


def run_sweep(cfg: RunConfig) -> list[dict]:
    """Train once per K in ``cfg.sweep_K``; one final-epoch record per K."""
    out = Path(cfg.out_dir)
    records = []
    for k in cfg.sweep_K:
        res = run_train(cfg.replace(K=k, out_dir=str(out / f"K{k}")))
        final = dict(res.records[-1])
        records.append({"K": k, **final})
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.jsonl", "w") as fh:
        for r in records:
            fh.write(json.dumps(r) + "\n")
    return records


def _entry(check, passed, **values):
    return {"check": check, "passed": bool(passed), **values}


def verification_suite(seed: int = 0) -> list[dict]:
    entries = []
    quad = oracle.ToyLoss("quadratic")
    for name, loss, center, rho in (
        ("quadratic_2d", quad, (1.0, 0.0), 0.5),
        ("quadratic_1d", quad, (0.5,), 1.0),
        ("sine_1d", oracle.ToyLoss("sine"), (0.0,), math.pi / 2),
    ):
        fo = oracle.sam_first_order_worst(loss, center, rho)
        gw = oracle.grid_worst_case(loss, center, rho, 201)
        gap = abs(fo.loss - gw.loss)
        entries.append(_entry(f"sam_equivalence/{name}", gap <= 1e-3, first_order=fo.loss, grid=gw.loss, gap=gap, tolerance=1e-3))
    rosen = oracle.ToyLoss("rosenbrock")
    fo = oracle.sam_first_order_worst(rosen, (0.0, 0.0), 0.5)
    gw = oracle.grid_worst_case(rosen, (0.0, 0.0), 0.5, 201)
    entries.append(_entry("sam_dominated/rosenbrock", fo.loss <= gw.loss, first_order=fo.loss, grid=gw.loss))

    for name, loss, center in (("quadratic_1d", quad, (0.0,)), ("quadratic_2d", quad, (1.0, 0.0)), ("rosenbrock", rosen, (0.0, 0.0))):
        for lam in (1.0, 10.0, 100.0):
            d = oracle.gibbs_density_grid(oracle.GibbsSpec(np.array(center), 1.0 if len(center) == 1 else 0.5, lam, 201), loss)
            err = abs(d.mass - 1.0)
            entries.append(_entry(f"gibbs_mass/{name}/lambda={lam:g}", err <= 1e-6, mass=d.mass, tolerance=1e-6))
    d1 = oracle.gibbs_density_grid(oracle.GibbsSpec(np.array([0.0]), 1.0, 1.0, 201), quad)
    ref = math.e / _erfi_normalizer()
    val = d1.density_at([1.0])
    entries.append(_entry("gibbs_density/quadratic_1d_at_1", abs(val - ref) <= 1e-3, density=val, reference=ref, tolerance=1e-3))
    conc = []
    for lam in (1.0, 10.0, 100.0):
        d = oracle.gibbs_density_grid(oracle.GibbsSpec(np.array([0.5]), 1.0, lam, 201), quad)
        conc.append(d.mass_near(oracle.grid_worst_case(quad, (0.5,), 1.0, 201).point))
    entries.append(_entry("gibbs_concentration_monotone", all(a <= b for a, b in zip(conc, conc[1:])), mass_near_argmax=conc))

    rep = oracle.sgld_mode_check(oracle.GibbsSpec(np.array([0.5]), 1.0, 10.0, 201), quad, 500, RngStream(seed, purpose="verify"))
    entries.append(_entry("sgld_mode_seeking", rep.fraction_near_mode >= 0.95, fraction=rep.fraction_near_mode, threshold=0.95))
    entries.append(_entry("sgld_containment", rep.mean_terminal_loss <= rep.ball_max_loss, mean_terminal=rep.mean_terminal_loss, ball_max=rep.ball_max_loss))

    ok, worst = _reduction_identity(seed)
    entries.append(_entry("sam_reduction_identity", ok, max_abs_delta=worst, tolerance=0.0))
    return entries


def _erfi_normalizer() -> float:
    """Integral of exp(t^2) over [-1, 1] via the power series of 2 * sum 1/(k! (2k+1))."""
    total, term = 0.0, 1.0
    for k in range(60):
        if k:
            term /= k
        total += term / (2 * k + 1)
    return 2.0 * total


def _reduction_identity(seed: int, trials: int = 20):
    model = ModelSpec((2, 8, 2))
    moons = make_two_moons(32, 0.1, _derived_seed(seed, "verify/moons"))
    batch = moons.as_batch()
    worst = 0.0
    for t in range(trials):
        theta = init_params(model, _derived_seed(seed, f"verify/reduction{t}"))
        cfg = PerturbConfig(rho1=0.05, rho2=0.0, K=1, noise_std=0.0, lr=0.1, split=False)
        a = otmdr_update(theta, model, batch, cfg, RngStream(seed, step=t))
        b = sam_update(theta, model, batch, 0.05, 0.1)
        worst = max(worst, float(np.max(np.abs(a.flatten() - b.flatten()))))
    return worst == 0.0, worst


def run_verify(cfg: RunConfig | None = None, out_dir=None) -> list[dict]:
    seed = cfg.seed if cfg is not None else 0
    entries = verification_suite(seed)
    target = out_dir or (cfg.out_dir if cfg is not None else None)
    if target is not None:
        Path(target).mkdir(parents=True, exist_ok=True)
        with open(Path(target) / "verify.jsonl", "w") as fh:
            for e in entries:
                fh.write(json.dumps(e) + "\n")
    return entries

"""Command line entry point: ``otmdr {train,eval,landscape,verify,sweep,prepare-mnist}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from otmdr import harness
from otmdr.config import parse_config
from otmdr.data import export_mnist_subset


def _load(args):
    cfg = parse_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = args.out
    return cfg.replace(**changes) if changes else cfg


def _checkpoint(args, cfg):
    return Path(args.checkpoint) if args.checkpoint else Path(cfg.out_dir) / "checkpoint.bin"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="otmdr", description="OT-MDR training and verification harness")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="key = value config file")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="override the output directory")

    common(sub.add_parser("train", help="train one run, writing metrics.jsonl and checkpoint.bin"))
    for name, text in (
        ("eval", "calibrated test metrics for a checkpoint"),
        ("landscape", "2-D loss surface around a checkpoint, as CSV"),
    ):
        sp = sub.add_parser(name, help=text)
        common(sp)
        sp.add_argument("--checkpoint", default=None, help="defaults to OUT/checkpoint.bin")
    common(sub.add_parser("verify", help="run the toy-loss oracle suite"), config_required=False)
    common(sub.add_parser("sweep", help="train once per K in sweep_K"))
    sp = sub.add_parser("prepare-mnist", help="export the bundled 5k-digit MNIST sample as IDX files")
    sp.add_argument("--out", required=True, help="directory for the four IDX files")
    sp.add_argument("--seed", type=int, default=0, help="seed for the stratified subset")
    sp.add_argument("--n-train", type=int, default=2000)
    sp.add_argument("--n-test", type=int, default=1000)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "prepare-mnist":
        paths = export_mnist_subset(args.out, args.n_train, args.n_test, args.seed)
        for v in paths.values():
            print(v)
        return 0
    if args.command == "verify":
        cfg = _load(args) if args.config else None
        entries = harness.run_verify(cfg, out_dir=args.out)
        for e in entries:
            print(json.dumps(e))
        return 0 if all(e["passed"] for e in entries) else 1
    cfg = _load(args)
    if args.command == "train":
        res = harness.run_train(cfg)
        print(json.dumps(res.records[-1]))
        print(res.metrics_path)
        print(res.checkpoint_path)
    elif args.command == "eval":
        print(json.dumps(harness.run_eval(cfg, _checkpoint(args, cfg)), sort_keys=True))
    elif args.command == "landscape":
        print(harness.run_landscape(cfg, _checkpoint(args, cfg)))
    elif args.command == "sweep":
        for r in harness.run_sweep(cfg):
            print(json.dumps(r))
    return 0


if __name__ == "__main__":
    sys.exit(main())

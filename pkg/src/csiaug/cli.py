"""Command line entry point: ``csiaug <subcommand> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import math
import sys

import numpy as np

from .augment import AugmentPlan, augment, target_for_multiple
from .channel_sim import synthesize_dataset
from .config import load_scenario
from .core import TensorDims
from .errors import CsiError
from .harness import load_experiment_config, run_experiment, run_robustness
from .io import ingest_raw, load_csid, save_csid
from .mlp import Regressor, Standardizer, TrainConfig, encode_dataset, init_model, load_checkpoint, save_checkpoint, train


def cmd_generate(args) -> int:
    scenario, extra = load_scenario(args.scenario)
    if args.seed is not None:
        scenario = dataclasses.replace(scenario, seed=args.seed)
    n = args.n if args.n is not None else extra.get("n_samples")
    if not n:
        raise SystemExit("generate: --n is required (or n_samples in the scenario file)")
    ds = synthesize_dataset(scenario, int(n), workers=args.workers)
    nbytes = save_csid(ds, args.out)
    print(f"wrote {len(ds)} samples, {nbytes} bytes -> {args.out}")
    return 0


def cmd_ingest(args) -> int:
    z = np.load(args.npz)
    dims = TensorDims(args.m, args.n_rx, args.n_ap)
    ds = ingest_raw(z[args.csi_key], z[args.labels_key], dims, args.env_tag, args.order)
    nbytes = save_csid(ds, args.out)
    print(f"wrote {len(ds)} samples, {nbytes} bytes -> {args.out}")
    return 0


def cmd_augment(args) -> int:
    ds = load_csid(args.inp)
    if args.target_size is not None:
        target = args.target_size
    else:
        target = target_for_multiple(args.multiple, len(ds))
    plan = AugmentPlan(args.method, target, p_star_db=args.p_star_db, noise_variance=args.noise_var, seed=args.seed)
    out = augment(ds, plan, workers=args.workers)
    nbytes = save_csid(out, args.out)
    print(f"{len(ds)} -> {len(out)} samples ({args.method}), {nbytes} bytes -> {args.out}")
    return 0


def cmd_train(args) -> int:
    ds = load_csid(args.inp)
    X, Y = encode_dataset(ds)
    scaler = None if args.no_standardize else Standardizer.fit(X)
    if scaler is not None:
        X = scaler.transform(X)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch, learning_rate=args.lr,
                      shuffle_seed=args.seed, init_seed=args.seed)

    def progress(epoch, loss):
        if args.verbose:
            print(f"epoch {epoch + 1}/{cfg.epochs} loss {loss:.6f}", file=sys.stderr)

    model, trace = train(init_model(X.shape[1], seed=args.seed), X, Y, cfg, log=progress)
    save_checkpoint(Regressor(model, scaler, args.seed), args.model_out)
    print(f"trained on {len(ds)} samples, final loss {trace[-1]:.6f} -> {args.model_out}")
    return 0


def cmd_evaluate(args) -> int:
    reg = load_checkpoint(args.model)
    mse = reg.mse(load_csid(args.inp))
    print(f"MSE {mse:.6f}")
    print(f"RMSE {math.sqrt(mse):.6f}")
    return 0


def _print_summary(report) -> None:
    for s in report.summary():
        print(f"{s['environment']:>24} {s['regime']:>7} {s['method']:>9} x{s['multiple']:<4} "
              f"median {s['median_mse']:.6f}  min {s['min_mse']:.6f}  max {s['max_mse']:.6f}  (n={s['n']})")


def cmd_experiment(args) -> int:
    report = run_experiment(load_experiment_config(args.config), args.out)
    _print_summary(report)
    return 0


def cmd_robustness(args) -> int:
    report = run_robustness(load_experiment_config(args.config), args.out)
    _print_summary(report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="csiaug", description="CSI augmentation for indoor localization")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize a dataset from a scenario file")
    g.add_argument("--scenario", required=True)
    g.add_argument("--n", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.add_argument("--workers", type=int, default=1)
    g.set_defaults(func=cmd_generate)

    i = sub.add_parser("ingest", help="convert raw arrays (.npz) to .csid")
    i.add_argument("--npz", required=True)
    i.add_argument("--csi-key", default="csi")
    i.add_argument("--labels-key", default="labels")
    i.add_argument("--m", type=int, required=True)
    i.add_argument("--n-rx", type=int, required=True)
    i.add_argument("--n-ap", type=int, required=True)
    i.add_argument("--order", default="narm", help="axis order of the flat data, e.g. 'nmra'")
    i.add_argument("--env-tag", default="measured")
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_ingest)

    a = sub.add_parser("augment", help="augment a .csid dataset")
    a.add_argument("--in", dest="inp", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--method", choices=["phase", "amplitude", "noise"], required=True)
    size = a.add_mutually_exclusive_group(required=True)
    size.add_argument("--multiple", type=float)
    size.add_argument("--target-size", type=int)
    a.add_argument("--p-star-db", type=float)
    a.add_argument("--noise-var", type=float, default=1.0)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--workers", type=int, default=1)
    a.set_defaults(func=cmd_augment)

    t = sub.add_parser("train", help="train an MLP on a .csid dataset")
    t.add_argument("--in", dest="inp", required=True)
    t.add_argument("--epochs", type=int, default=300)
    t.add_argument("--batch", type=int, default=128)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--no-standardize", action="store_true")
    t.add_argument("--model-out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a model checkpoint on a .csid dataset")
    e.add_argument("--model", required=True)
    e.add_argument("--in", dest="inp", required=True)
    e.set_defaults(func=cmd_evaluate)

    for name, fn in (("experiment", cmd_experiment), ("robustness", cmd_robustness)):
        x = sub.add_parser(name, help=f"run a {name} config")
        x.add_argument("--config", required=True)
        x.add_argument("--out", required=True)
        x.set_defaults(func=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CsiError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``active-bpmf <command> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from . import data, harness
from .errors import ConfigError

logger = logging.getLogger("active_bpmf")

WORKERS_ENV = "ACTIVE_BPMF_WORKERS"


def _default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV}={raw!r} is not an integer") from None
    if n < 1:
        raise ConfigError(f"{WORKERS_ENV} must be at least 1")
    return n


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None


def cmd_gen_synthetic(args) -> int:
    fields = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        fields["seed"] = args.seed
    cfg = harness._build(data.SyntheticConfig, fields, "synthetic config")
    ds = data.generate_synthetic(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data.write_ratings(ds.table, out / "ratings.csv")
    data.write_features(ds.bank.face_features, out / "face_features.csv")
    data.write_features(ds.bank.trait_features, out / "trait_features.csv")
    data.write_features(ds.true_W_F, out / "true_W_F.csv")
    data.write_features(ds.true_W_T, out / "true_W_T.csv")
    with open(out / "synthetic.json", "w", encoding="utf-8") as fh:
        json.dump(dataclasses.asdict(cfg), fh, indent=2)
        fh.write("\n")
    logger.info("wrote %d observations to %s", len(ds.table), out)
    return 0


def cmd_reduce(args) -> int:
    reduced = data.reduce_features(data.load_features(args.input), args.dim, args.method,
                                   0 if args.seed is None else args.seed)
    data.write_features(reduced, args.out)
    logger.info("reduced %s to %d columns", args.input, args.dim)
    return 0


def cmd_subset(args) -> int:
    table = data.load_ratings(args.ratings)
    per_cell = None if args.per_cell == "all" else int(args.per_cell)
    sub = data.subset_sample(table, args.faces, args.traits, per_cell,
                             0 if args.seed is None else args.seed)
    data.write_ratings(sub, args.out)
    logger.info("kept %d of %d observations", len(sub), len(table))
    return 0


def cmd_run(args) -> int:
    if not args.config:
        raise ConfigError("run needs --config")
    config = harness.ExperimentConfig.from_json(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, master_seed=args.seed)
    workers = args.workers if args.workers is not None else _default_workers()
    manifest = harness.run_experiment(config, workers=workers, output_dir=args.out)
    for arm, errs in manifest["arm_errors"].items():
        for e in errs:
            print(f"arm {arm} failed: {e}", file=sys.stderr)
    return 1 if manifest["arm_errors"] else 0


def cmd_eval(args) -> int:
    preds = harness.read_predictions(args.predictions)
    rmse = harness.evaluate_rmse(preds, data.load_ratings(args.ratings))
    print(repr(rmse))
    return 0


def cmd_aggregate(args) -> int:
    paths = []
    for p in args.traces:
        p = Path(p)
        paths.extend(sorted(p.glob("*.csv")) if p.is_dir() else [p])
    rows = harness.aggregate_traces(paths, args.window, args.level)
    harness.write_aggregate(rows, args.out)
    logger.info("aggregated %d traces into %s", len(paths), args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--seed", type=_u64, help="seed override (unsigned 64-bit)")
    common.add_argument("--workers", type=_positive,
                        help=f"parallel runs (default: ${WORKERS_ENV} or 1)")
    common.add_argument("--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="active-bpmf",
                                     description="Active learning for feature-driven BPMF.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", parents=[common], help="write a synthetic dataset")
    p.set_defaults(func=cmd_gen_synthetic, out_required=True)

    p = sub.add_parser("reduce", parents=[common], help="reduce a feature matrix")
    p.add_argument("--input", required=True)
    p.add_argument("--dim", type=_positive, required=True)
    p.add_argument("--method", choices=("pca", "random_projection"), default="pca")
    p.set_defaults(func=cmd_reduce, out_required=True)

    p = sub.add_parser("subset", parents=[common], help="faces x traits subset of a ratings file")
    p.add_argument("--ratings", required=True)
    p.add_argument("--faces", type=_positive, required=True)
    p.add_argument("--traits", type=_positive, required=True)
    p.add_argument("--per-cell", default="all", help="observations per cell, or 'all'")
    p.set_defaults(func=cmd_subset, out_required=True)

    p = sub.add_parser("run", parents=[common], help="run an experiment config")
    p.set_defaults(func=cmd_run, out_required=False)

    p = sub.add_parser("eval", parents=[common], help="RMSE of a predictions file on a ratings file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--ratings", required=True)
    p.set_defaults(func=cmd_eval, out_required=False)

    p = sub.add_parser("aggregate", parents=[common], help="re-aggregate raw trace files")
    p.add_argument("traces", nargs="+", help="trace CSV files or directories of them")
    p.add_argument("--window", type=_positive, default=1)
    p.add_argument("--level", type=float, default=0.95)
    p.set_defaults(func=cmd_aggregate, out_required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.out_required and not args.out:
        parser.error(f"{args.command} needs --out")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Experiment runner: arms x repetitions, RMSE curves, smoothing and confidence bands.

Output layout under ``output_dir``::

    traces/arm{a}_rep{r}.csv       one row per loop iteration
    predictions/arm{a}_rep{r}.csv  final mean_r_hat per cell
    aggregates/arm{a}.csv          smoothed mean curve with Student-t band
    manifest.json                  config echo, seeds, versions, timings, errors

Trace files hold every ActiveTrace column except ``wallclock_seconds``, which
goes to the manifest so reruns with the same seed produce identical bytes.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import stats

from .active import ActiveTrace, StrategyConfig, _child_seed, run_active_loop
from .data import SyntheticConfig, generate_synthetic, load_features, load_ratings
from .errors import ConfigError, DomainError, IntegrityError
from .model import FeatureBank, Hyperparams, RatingsTable
from .sampler import ChainConfig

logger = logging.getLogger(__name__)

__all__ = [
    "ArmConfig",
    "ExperimentConfig",
    "Band",
    "TRACE_COLUMNS",
    "AGGREGATE_COLUMNS",
    "evaluate_rmse",
    "smooth_curve",
    "confidence_interval",
    "derive_seed",
    "load_dataset",
    "run_experiment",
    "read_trace",
    "write_trace",
    "aggregate_traces",
    "write_aggregate",
    "read_predictions",
    "write_predictions",
]

TRACE_COLUMNS = tuple(c for c in ActiveTrace.COLUMNS if c != "wallclock_seconds")
AGGREGATE_COLUMNS = ("iteration", "train_size", "n_reps", "mean", "lower", "upper")
_INT_COLUMNS = {"iteration", "train_size", "chain_warmup", "chain_samples"}


def _build(cls, data, where):
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class ArmConfig:
    strategy: StrategyConfig
    chain: ChainConfig = field(default_factory=ChainConfig)
    schedule_option: int | None = None
    schedule_k: int = 1

    def __post_init__(self):
        object.__setattr__(self, "strategy", _build(StrategyConfig, self.strategy, "strategy"))
        object.__setattr__(self, "chain", _build(ChainConfig, self.chain, "chain"))
        if self.schedule_option not in (None, 1, 2, 3):
            raise ConfigError("schedule_option must be 1, 2, 3 or null")
        if isinstance(self.schedule_k, bool) or not isinstance(self.schedule_k, int) or self.schedule_k < 1:
            raise ConfigError("schedule_k must be a positive integer")

    @property
    def schedule(self):
        return None if self.schedule_option is None else (self.schedule_option, self.schedule_k)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce a run, JSON field names included.

    Exactly one data source is given: the three CSV paths, or ``synthetic``.
    Relative paths are resolved against ``base_dir`` (the config file's
    directory when loaded from disk).
    """

    arms: tuple
    ratings: str | None = None
    face_features: str | None = None
    trait_features: str | None = None
    synthetic: SyntheticConfig | None = None
    repetitions: int = 3
    smoothing_window: int = 1
    ci_level: float = 0.95
    output_dir: str = "results"
    master_seed: int = 0
    hyper: Hyperparams = field(default_factory=Hyperparams)
    base_dir: str = "."

    def __post_init__(self):
        arms = tuple(_build(ArmConfig, a, f"arms[{i}]") if isinstance(a, dict) else a
                     for i, a in enumerate(self.arms))
        object.__setattr__(self, "arms", arms)
        if not arms:
            raise ConfigError("at least one arm is required")
        if self.synthetic is not None:
            object.__setattr__(self, "synthetic", _build(SyntheticConfig, self.synthetic, "synthetic"))
        object.__setattr__(self, "hyper", _build(Hyperparams, self.hyper, "hyper"))
        paths = (self.ratings, self.face_features, self.trait_features)
        if self.synthetic is None and None in paths:
            raise ConfigError("give ratings, face_features and trait_features, or a synthetic config")
        if self.synthetic is not None and any(p is not None for p in paths):
            raise ConfigError("data paths and a synthetic config are mutually exclusive")
        for name in ("repetitions", "smoothing_window"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if not 0.0 < self.ci_level < 1.0:
            raise ConfigError("ci_level must lie in (0, 1)")
        if isinstance(self.master_seed, bool) or not isinstance(self.master_seed, int) \
                or not 0 <= self.master_seed < 2 ** 64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")

    @classmethod
    def from_dict(cls, data: dict, base_dir=".") -> ExperimentConfig:
        data = dict(data)
        data.setdefault("base_dir", str(base_dir))
        return _build(cls, data, "config")

    @classmethod
    def from_json(cls, path) -> ExperimentConfig:
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(data, base_dir=path.parent)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["arms"] = [dataclasses.asdict(a) for a in self.arms]
        return d

    def resolve(self, path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p


def evaluate_rmse(predictions: dict, test: RatingsTable) -> float:
    """RMSE between observed ratings and their cells' predicted mean ratings."""
    if len(test) == 0:
        raise DomainError("empty test set")
    pred = np.empty(len(test))
    for i, cell in enumerate(zip(test.face_id.tolist(), test.trait_id.tolist())):
        try:
            pred[i] = predictions[cell]
        except KeyError:
            raise IntegrityError(f"no prediction for cell (face {cell[0]}, trait {cell[1]})") from None
    return float(np.sqrt(np.mean((test.rating - pred) ** 2)))


def smooth_curve(series, window: int) -> list:
    """Centered moving average of the y values, truncated at both ends.

    An even ``window`` reaches one point further right than left. NaN values
    are skipped; a window holding only NaN stays NaN.
    """
    if isinstance(window, bool) or int(window) != window or window < 1:
        raise ConfigError("smoothing window must be a positive integer")
    xs = [x for x, _ in series]
    y = np.array([v for _, v in series], dtype=np.float64)
    lo, hi = (window - 1) // 2, window // 2
    out = []
    for i, x in enumerate(xs):
        seg = y[max(0, i - lo): i + hi + 1]
        seg = seg[~np.isnan(seg)]
        out.append((x, float(seg.mean()) if seg.size else math.nan))
    return out


class Band(NamedTuple):
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def confidence_interval(curves, level: float = 0.95) -> Band:
    """Pointwise Student-t band over repetitions. One repetition gives zero width."""
    lengths = {len(c) for c in curves}
    if len(lengths) != 1:
        raise IntegrityError(f"repetition curves differ in length: {sorted(lengths)}")
    if not 0.0 < level < 1.0:
        raise ConfigError("level must lie in (0, 1)")
    Y = np.asarray(curves, dtype=np.float64)
    n = Y.shape[0]
    mean = Y.mean(axis=0)
    if n < 2:
        return Band(mean, mean.copy(), mean.copy())
    half = stats.t.ppf(0.5 + level / 2.0, n - 1) * Y.std(axis=0, ddof=1) / math.sqrt(n)
    return Band(mean, mean - half, mean + half)


def derive_seed(master_seed: int, arm: int, repetition: int) -> int:
    """Child seed of one (arm, repetition) run: a SeedSequence hash of the triple."""
    return _child_seed(master_seed, arm, repetition)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def load_dataset(config: ExperimentConfig) -> tuple[RatingsTable, FeatureBank]:
    if config.synthetic is not None:
        ds = generate_synthetic(config.synthetic)
        return ds.table, ds.bank
    table = load_ratings(config.resolve(config.ratings), config.hyper.logit_clamp)
    bank = FeatureBank(load_features(config.resolve(config.face_features)),
                       load_features(config.resolve(config.trait_features)))
    return table, bank


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_trace(trace: ActiveTrace, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in trace.as_dicts():
            w.writerow([_fmt(row[c]) for c in TRACE_COLUMNS])


def read_trace(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        out.append({k: (int(v) if k in _INT_COLUMNS else v if k == "strategy_kind" else float(v))
                    for k, v in r.items()})
    return out


def write_predictions(predictions: dict, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("face_id", "trait_id", "mean_r_hat"))
        for (f, t) in sorted(predictions):
            w.writerow((f, t, repr(float(predictions[(f, t)]))))


def read_predictions(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        return {(int(r["face_id"]), int(r["trait_id"])): float(r["mean_r_hat"])
                for r in csv.DictReader(fh)}


def aggregate_traces(traces, window: int = 1, level: float = 0.95) -> list[dict]:
    """Per-iteration mean and band of smoothed test RMSE across repetitions.

    ``traces`` are row lists as returned by :func:`read_trace` or file paths.
    Each repetition's curve is smoothed on its own before the band is taken.
    Repetitions that stopped early are cut to the shortest length.
    """
    traces = [read_trace(t) if isinstance(t, (str, os.PathLike)) else t for t in traces]
    if not traces:
        raise DomainError("no traces to aggregate")
    n = min(len(t) for t in traces)
    curves = [[y for _, y in smooth_curve([(r["train_size"], r["test_rmse"]) for r in t[:n]], window)]
              for t in traces]
    band = confidence_interval(curves, level)
    return [{"iteration": traces[0][i]["iteration"], "train_size": traces[0][i]["train_size"],
             "n_reps": len(traces), "mean": float(band.mean[i]),
             "lower": float(band.lower[i]), "upper": float(band.upper[i])} for i in range(n)]


def write_aggregate(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AGGREGATE_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in AGGREGATE_COLUMNS])


def _run_one(table, bank, hyper, arm: ArmConfig, arm_index, rep, seed, out_dir):
    """Worker body: one active loop, files written, timing and status returned."""
    strategy = dataclasses.replace(arm.strategy, seed=_child_seed(seed, 0))
    chain = dataclasses.replace(arm.chain, seed=_child_seed(seed, 1))
    name = f"arm{arm_index}_rep{rep}.csv"
    start = time.perf_counter()
    try:
        res = run_active_loop(table, bank, hyper, strategy, chain, schedule=arm.schedule)
        write_trace(res.trace, Path(out_dir) / "traces" / name)
        write_predictions(res.final_predictions, Path(out_dir) / "predictions" / name)
    except Exception as exc:  # recorded per arm; the other arms carry on
        logger.error("arm %d rep %d failed: %s", arm_index, rep, exc)
        return {"arm": arm_index, "repetition": rep, "seed": seed, "status": "error",
                "error": f"{type(exc).__name__}: {exc}",
                "wallclock_seconds": time.perf_counter() - start}
    return {"arm": arm_index, "repetition": rep, "seed": seed, "status": "ok", "error": None,
            "iteration_wallclock": res.trace.column("wallclock_seconds").tolist(),
            "wallclock_seconds": time.perf_counter() - start}


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for dist in ("active-bpmf", "numpy", "scipy"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


def run_experiment(config: ExperimentConfig, workers: int = 1, output_dir=None) -> dict:
    """Run every arm x repetition, write traces, aggregates and the manifest.

    Returns the manifest dict. Runs execute in a process pool when
    ``workers > 1``. A failing run marks its arm as failed in the manifest
    and skips that arm's aggregate.
    """
    if isinstance(workers, bool) or int(workers) != workers or workers < 1:
        raise ConfigError("workers must be a positive integer")
    out = Path(output_dir) if output_dir is not None else config.resolve(config.output_dir)
    for sub in ("traces", "predictions", "aggregates"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    started = time.time()
    table, bank = load_dataset(config)

    jobs = [(a, r, derive_seed(config.master_seed, a, r))
            for a in range(len(config.arms)) for r in range(config.repetitions)]
    args = [(table, bank, config.hyper, config.arms[a], a, r, s, str(out)) for a, r, s in jobs]
    if workers == 1 or len(jobs) == 1:
        runs = [_run_one(*x) for x in args]
    else:
        with ProcessPoolExecutor(max_workers=min(int(workers), len(jobs))) as pool:
            futures = [pool.submit(_run_one, *x) for x in args]
            runs = [f.result() for f in futures]

    arm_errors = {}
    for a in range(len(config.arms)):
        failed = [r for r in runs if r["arm"] == a and r["status"] != "ok"]
        if failed:
            arm_errors[str(a)] = [f"rep {r['repetition']}: {r['error']}" for r in failed]
            continue
        paths = [out / "traces" / f"arm{a}_rep{r}.csv" for r in range(config.repetitions)]
        rows = aggregate_traces(paths, config.smoothing_window, config.ci_level)
        write_aggregate(rows, out / "aggregates" / f"arm{a}.csv")

    data_files = {}
    if config.synthetic is None:
        for key in ("ratings", "face_features", "trait_features"):
            p = config.resolve(getattr(config, key))
            data_files[key] = {"path": str(p), "sha256": _sha256(p)}
    manifest = {
        "config": config.to_dict(),
        "data_files": data_files,
        "n_observations": len(table),
        "versions": _versions(),
        "workers": int(workers),
        "seed_derivation": "SeedSequence([master_seed, arm, repetition]) -> uint64; "
                           "strategy seed = child(seed, 0), chain seed = child(seed, 1)",
        "runs": runs,
        "arm_errors": arm_errors,
        "started_unix": started,
        "wallclock_seconds": time.time() - started,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, default=str)
        fh.write("\n")
    return manifest

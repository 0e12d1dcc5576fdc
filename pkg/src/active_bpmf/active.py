"""Batched acquisition strategies and the budgeted active-learning loop."""

from __future__ import annotations

import logging
import time
import warnings
from collections.abc import Mapping
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigError, DomainError, PoolExhaustedWarning, ShapeError
from .model import FeatureBank, Hyperparams, RatingsTable, sample_prior_state
from .sampler import ChainConfig, aggregate_predictions, run_chain, with_schedule

logger = logging.getLogger(__name__)

__all__ = [
    "STRATEGIES",
    "PoolPartition",
    "StrategyConfig",
    "TraceRow",
    "ActiveTrace",
    "ActiveResult",
    "init_pool",
    "select_uncertainty_batch",
    "pair_distance",
    "normalize_bank",
    "select_kcenter_batch",
    "coverage_radius",
    "select_passive_batch",
    "run_active_loop",
    "rmse",
]

STRATEGIES = ("uncertainty", "kcenter", "passive")

# cells per block when computing nearest-center distances
_CHUNK = 4096


@dataclass(frozen=True, eq=False)
class PoolPartition:
    """Training pool and the remaining queryable (and test) observations."""

    known: np.ndarray
    candidates: np.ndarray

    def __post_init__(self):
        known = np.sort(np.asarray(self.known, dtype=np.int64))
        cand = np.sort(np.asarray(self.candidates, dtype=np.int64))
        if np.intersect1d(known, cand).size:
            raise DomainError("known and candidate sets overlap")
        known.flags.writeable = False
        cand.flags.writeable = False
        object.__setattr__(self, "known", known)
        object.__setattr__(self, "candidates", cand)

    def query(self, batch) -> "PoolPartition":
        batch = np.asarray(batch, dtype=np.int64)
        if not np.all(np.isin(batch, self.candidates)):
            raise DomainError("batch contains observations outside the candidate set")
        return PoolPartition(np.concatenate([self.known, batch]),
                             np.setdiff1d(self.candidates, batch))


@dataclass(frozen=True)
class StrategyConfig:
    kind: str = "uncertainty"
    batch_size: int = 8
    budget: int = 10
    init_pool_size: int = 8
    distinct_cells: bool = False
    normalize_features: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.kind!r}; expected one of {STRATEGIES}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.budget < 0:
            raise ConfigError("budget must be non-negative")
        if self.init_pool_size < 1:
            raise ConfigError("init_pool_size must be at least 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    train_size: int
    test_rmse: float
    chain_warmup: int
    chain_samples: int
    wallclock_seconds: float
    strategy_kind: str
    accept_rate: float
    step_size: float
    coverage_radius: float


@dataclass
class ActiveTrace:
    rows: list = field(default_factory=list)

    COLUMNS = tuple(TraceRow.__dataclass_fields__)

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])

    def as_dicts(self):
        return [asdict(r) for r in self.rows]


class ActiveResult(NamedTuple):
    trace: ActiveTrace
    final_predictions: dict
    final_partition: PoolPartition


def _check_batch(n_candidates, p):
    if p < 1:
        raise ConfigError("batch size must be at least 1")
    if p > n_candidates:
        warnings.warn(f"only {n_candidates} candidates left for a batch of {p}",
                      PoolExhaustedWarning, stacklevel=3)
        return n_candidates
    return p


def init_pool(table, size: int, seed: int) -> PoolPartition:
    """Uniformly random initial training pool of ``size`` observations.

    ``table`` may be a :class:`RatingsTable` or the number of observations.
    """
    n = table if isinstance(table, (int, np.integer)) else len(table)
    if not 1 <= size <= n:
        raise ConfigError(f"initial pool size {size} not in [1, {n}]")
    known = np.random.default_rng(seed).choice(n, size, replace=False)
    return PoolPartition(known, np.setdiff1d(np.arange(n), known))


def select_uncertainty_batch(scores, candidates, p: int, cell_of=None,
                             distinct_cells: bool = False) -> np.ndarray:
    """The ``p`` candidates with the largest uncertainty scores, in selection order.

    ``scores`` is a mapping obs_id -> score or an array aligned with
    ``candidates``. Ties go to the smaller obs_id. With ``distinct_cells``
    each cell (given by ``cell_of``, aligned with ``candidates``) contributes
    one observation before any cell contributes a second.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    if isinstance(scores, Mapping):
        scores = np.array([scores[int(c)] for c in candidates], dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != candidates.shape:
        raise ShapeError("scores must align with candidates")
    p = _check_batch(candidates.size, p)
    order = np.lexsort((candidates, -scores))
    if distinct_cells:
        if cell_of is None:
            raise ConfigError("distinct_cells requires cell_of")
        cell_of = np.asarray(cell_of)[order]
        # rank of each observation within its own cell, in score order
        _, first = np.unique(cell_of, return_index=True)
        is_first = np.zeros(order.size, dtype=bool)
        is_first[first] = True
        order = np.concatenate([order[is_first], order[~is_first]])
    return candidates[order[:p]]


def pair_distance(u_a, u_b, normalize: bool = False, bank: FeatureBank | None = None) -> float:
    """Euclidean distance between two (face row, trait row) feature pairs.

    With ``normalize`` both rows are z-scored with the column statistics of
    ``bank`` first.
    """
    fa, ta = (np.asarray(x, dtype=np.float64) for x in u_a)
    fb, tb = (np.asarray(x, dtype=np.float64) for x in u_b)
    if fa.shape != fb.shape or ta.shape != tb.shape:
        raise ShapeError("feature pairs have mismatched dimensions")
    if normalize:
        if bank is None:
            raise ConfigError("normalize=True needs the feature bank for column statistics")
        (mf, sf), (mt, st) = _zscore_stats(bank.face_features), _zscore_stats(bank.trait_features)
        fa, fb = (fa - mf) / sf, (fb - mf) / sf
        ta, tb = (ta - mt) / st, (tb - mt) / st
    return float(np.sqrt(np.sum((fa - fb) ** 2) + np.sum((ta - tb) ** 2)))


def _zscore_stats(m):
    mean = m.mean(axis=0)
    std = m.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


def normalize_bank(bank: FeatureBank) -> FeatureBank:
    """Column-wise z-scored copy of both feature matrices."""
    (mf, sf), (mt, st) = _zscore_stats(bank.face_features), _zscore_stats(bank.trait_features)
    return FeatureBank((bank.face_features - mf) / sf, (bank.trait_features - mt) / st)


def _cell_points(bank: FeatureBank, table: RatingsTable):
    faces, traits, inv = table.cells()
    X = np.hstack([bank.face_features[faces], bank.trait_features[traits]])
    return X, inv


def _nearest_distance(X, targets, centers):
    """Distance from each row of ``X[targets]`` to its nearest row in ``X[centers]``."""
    out = np.full(targets.size, np.inf)
    if centers.size == 0:
        return out
    C = X[centers]
    for start in range(0, targets.size, _CHUNK):
        block = targets[start:start + _CHUNK]
        out[start:start + block.size] = cdist(X[block], C).min(axis=1)
    return out


def select_kcenter_batch(bank: FeatureBank, table: RatingsTable, known, candidates,
                         p: int) -> np.ndarray:
    """Greedy farthest-point batch: each pick maximizes its distance to the
    nearest already-known or already-selected point. Ties go to the smaller obs_id.

    Distances are taken on the feature pairs as given; z-score the bank
    beforehand (:func:`normalize_bank`) for normalized distances.
    """
    known = np.asarray(known, dtype=np.int64)
    candidates = np.sort(np.asarray(candidates, dtype=np.int64))
    if known.size == 0:
        raise DomainError("k-center selection needs a non-empty known pool")
    p = _check_batch(candidates.size, p)
    X, cell = _cell_points(bank, table)
    n_cells = X.shape[0]
    cand_cells = np.unique(cell[candidates])
    d_cell = np.full(n_cells, np.inf)
    d_cell[cand_cells] = _nearest_distance(X, cand_cells, np.unique(cell[known]))

    selected = []
    available = np.ones(candidates.size, dtype=bool)
    for _ in range(p):
        d = np.where(available, d_cell[cell[candidates]], -np.inf)
        i = int(np.argmax(d))
        selected.append(candidates[i])
        available[i] = False
        c = cell[candidates[i]]
        d_cell[cand_cells] = np.minimum(d_cell[cand_cells],
                                        np.linalg.norm(X[cand_cells] - X[c], axis=1))
    return np.array(selected, dtype=np.int64)


def coverage_radius(centers, all_points, bank: FeatureBank, table: RatingsTable) -> float:
    """Largest distance from any of ``all_points`` to its nearest center."""
    centers = np.asarray(centers, dtype=np.int64)
    if centers.size == 0:
        raise DomainError("coverage radius needs at least one center")
    all_points = np.asarray(all_points, dtype=np.int64)
    if all_points.size == 0:
        return 0.0
    X, cell = _cell_points(bank, table)
    d = _nearest_distance(X, np.unique(cell[all_points]), np.unique(cell[centers]))
    return float(d.max())


def select_passive_batch(candidates, p: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random ``p``-subset of the candidates, without replacement."""
    candidates = np.sort(np.asarray(candidates, dtype=np.int64))
    p = _check_batch(candidates.size, p)
    return rng.choice(candidates, p, replace=False)


def rmse(predicted, observed) -> float:
    predicted = np.asarray(predicted, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    if observed.size == 0:
        raise DomainError("RMSE of an empty test set is undefined")
    return float(np.sqrt(np.mean((observed - predicted) ** 2)))


def _child_seed(*keys) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1, np.uint64)[0])


def run_active_loop(table: RatingsTable, bank: FeatureBank, hyper: Hyperparams,
                    strategy: StrategyConfig, chain: ChainConfig,
                    schedule: tuple[int, int] | None = None, callback=None) -> ActiveResult:
    """Fit, evaluate, query: repeat ``strategy.budget`` times, then fit once more.

    Each iteration fits a chain on the known pool (warm-started from the
    previous chain's last state and step size when ``chain.warm_start``),
    scores every cell, records the test RMSE over the unqueried
    observations and moves a batch from the candidates into the pool.
    ``schedule`` is an optional ``(option, k)`` pair that overrides the
    chain's warmup and sample counts via :func:`chain_schedule`.
    ``callback(row, partition, aggregate)``, if given, is called once per
    iteration with the cell-level :class:`Aggregate` over ``table.cells()``.
    """
    if schedule is not None:
        chain = with_schedule(chain, *schedule)
    partition = init_pool(table, strategy.init_pool_size, strategy.seed)
    faces, traits, cell = table.cells()
    cells = np.stack([faces, traits], axis=1)
    select_rng = np.random.default_rng(_child_seed(strategy.seed, 1))
    kc_bank = None
    if strategy.kind == "kcenter":
        kc_bank = normalize_bank(bank) if strategy.normalize_features else bank

    trace = ActiveTrace()
    bundle = None
    agg = None
    for q in range(strategy.budget + 1):
        t0 = time.perf_counter()
        train = table.subset(partition.known)
        if chain.warm_start and bundle is not None:
            init = bundle.final_state
            cfg = replace(chain, seed=_child_seed(chain.seed, q),
                          initial_step_size=bundle.final_step_size)
        else:
            init = sample_prior_state(bank, hyper,
                                      np.random.default_rng(_child_seed(chain.seed, q, 1)))
            cfg = replace(chain, seed=_child_seed(chain.seed, q))
        bundle = run_chain(init, train, bank, hyper, cfg)
        agg = aggregate_predictions(bundle, bank, cells, chain.aggregation_window)

        cand = partition.candidates
        test_rmse = rmse(agg.mean_r_hat[cell[cand]], table.rating[cand]) if cand.size else float("nan")
        radius = float("nan")
        if kc_bank is not None:
            radius = coverage_radius(partition.known, np.arange(len(table)), kc_bank, table)

        done = q == strategy.budget or cand.size == 0
        if not done:
            p = strategy.batch_size
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", PoolExhaustedWarning)
                if strategy.kind == "uncertainty":
                    batch = select_uncertainty_batch(agg.std_r_star[cell[cand]], cand, p,
                                                     cell[cand], strategy.distinct_cells)
                elif strategy.kind == "kcenter":
                    batch = select_kcenter_batch(kc_bank, table, partition.known, cand, p)
                else:
                    batch = select_passive_batch(cand, p, select_rng)
            if batch.size < p:
                logger.info("candidate pool exhausted at iteration %d", q)

        row = TraceRow(q, int(partition.known.size), test_rmse, cfg.warmup, cfg.samples,
                       time.perf_counter() - t0, strategy.kind, bundle.accept_rate,
                       bundle.final_step_size, radius)
        trace.rows.append(row)
        if callback is not None:
            callback(row, partition, agg)
        logger.debug("iter %d: train %d, rmse %.4f", q, partition.known.size, test_rmse)
        if done:
            break
        partition = partition.query(batch)

    predictions = {(int(f), int(t)): float(v) for f, t, v in zip(faces, traits, agg.mean_r_hat)}
    return ActiveResult(trace, predictions, partition)

"""Leapfrog/Metropolis MCMC over :class:`ModelState` and posterior aggregation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigError, InitializationError
from .model import (FeatureBank, Hyperparams, ModelState, PosteriorTarget,
                    RatingsTable, check_compatible, predict_cells)

logger = logging.getLogger(__name__)

__all__ = ["ChainConfig", "PosteriorBundle", "Aggregate", "run_chain",
           "aggregate_predictions", "chain_schedule", "with_schedule", "BLOCKS"]

BLOCKS = ("W_F", "W_T", "sigma", "theta")

# multiplicative step-size update applied after each warmup iteration
_STEP_UP = 1.02
_STEP_DOWN = 0.98


@dataclass(frozen=True)
class ChainConfig:
    warmup: int = 30
    samples: int = 50
    leapfrog_steps: int = 20
    initial_step_size: float = 0.01
    target_accept: float = 0.75
    aggregation_window: int = 10
    warm_start: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.warmup < 0:
            raise ConfigError("warmup must be non-negative")
        if self.samples < 1:
            raise ConfigError("samples must be at least 1")
        if self.leapfrog_steps < 1:
            raise ConfigError("leapfrog_steps must be at least 1")
        if not self.initial_step_size > 0:
            raise ConfigError("initial_step_size must be positive")
        if not 0.0 < self.target_accept < 1.0:
            raise ConfigError("target_accept must lie in (0, 1)")
        if self.aggregation_window < 1:
            raise ConfigError("aggregation_window must be at least 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True, eq=False)
class PosteriorBundle:
    """Recorded post-warmup draws of one chain."""

    draws: tuple
    accept_rate: float
    final_step_size: float
    final_state: ModelState

    def __post_init__(self):
        if not self.draws:
            raise ConfigError("a posterior bundle needs at least one draw")

    def __len__(self):
        return len(self.draws)


class Aggregate(NamedTuple):
    mean_r_hat: np.ndarray
    std_r_star: np.ndarray


def _free_mask(target: PosteriorTarget, fixed: Sequence[str]) -> np.ndarray:
    unknown = set(fixed) - set(BLOCKS)
    if unknown:
        raise ConfigError(f"unknown parameter blocks {sorted(unknown)}")
    mask = np.ones(target.size)
    nf, nt = target.n_face_w, target.n_trait_w
    spans = {"W_F": slice(0, nf), "W_T": slice(nf, nf + nt),
             "sigma": slice(nf + nt, nf + nt + 1), "theta": slice(nf + nt + 1, nf + nt + 2)}
    for name in fixed:
        mask[spans[name]] = 0.0
    return mask


def run_chain(init: ModelState, table: RatingsTable, bank: FeatureBank, hyper: Hyperparams,
              config: ChainConfig, fixed: Sequence[str] = ()) -> PosteriorBundle:
    """Run ``warmup + samples`` leapfrog/Metropolis iterations from ``init``.

    The step size is adapted multiplicatively toward ``target_accept``
    during warmup and frozen afterwards. Blocks named in ``fixed`` (any of
    ``"W_F", "W_T", "sigma", "theta"``) are held at their initial values.
    """
    check_compatible(init, bank, hyper)
    target = PosteriorTarget(table, bank, hyper)
    mask = _free_mask(target, fixed)
    rng = np.random.default_rng(config.seed)

    q = init.pack()
    logp, grad = target.logp_and_grad(q)
    if not np.isfinite(logp) or not np.all(np.isfinite(grad)):
        raise InitializationError("log-posterior is not finite at the initial state")
    grad = grad * mask

    eps = float(config.initial_step_size)
    n_leap = config.leapfrog_steps
    draws = []
    n_accept = 0
    for it in range(config.warmup + config.samples):
        p0 = mask * rng.standard_normal(target.size)
        log_u = np.log(rng.uniform())
        q1 = q.copy()
        p1 = p0 + 0.5 * eps * grad
        logp1, grad1 = logp, grad
        for step in range(n_leap):
            q1 = q1 + eps * p1
            logp1, grad1 = target.logp_and_grad(q1)
            if not np.isfinite(logp1):
                break
            grad1 = grad1 * mask
            if step < n_leap - 1:
                p1 = p1 + eps * grad1
        if np.isfinite(logp1) and np.all(np.isfinite(grad1)):
            p1 = p1 + 0.5 * eps * grad1
            with np.errstate(over="ignore", invalid="ignore"):
                log_alpha = (logp1 - 0.5 * p1 @ p1) - (logp - 0.5 * p0 @ p0)
            if np.isnan(log_alpha):
                log_alpha = -np.inf
        else:
            log_alpha = -np.inf
        accepted = log_u < log_alpha
        if accepted:
            q, logp, grad = q1, logp1, grad1

        if it < config.warmup:
            accept_prob = 1.0 if log_alpha >= 0 else float(np.exp(log_alpha))
            eps *= _STEP_UP if accept_prob > config.target_accept else _STEP_DOWN
        else:
            n_accept += bool(accepted)
            draws.append(target.unpack(q))

    rate = n_accept / config.samples
    logger.debug("chain done: accept %.3f, step %.4g", rate, eps)
    return PosteriorBundle(tuple(draws), rate, eps, draws[-1])


def aggregate_predictions(bundle: PosteriorBundle, bank: FeatureBank, cells,
                          window: int = 10) -> Aggregate:
    """Posterior mean rating and latent-score spread over the last draws.

    Uses the trailing ``min(window, len(bundle))`` draws. ``std_r_star``
    is the sample standard deviation (n - 1 divisor, 0 for one draw).
    """
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    if cells.shape[0] == 0:
        return Aggregate(np.zeros(0), np.zeros(0))
    if window < 1:
        raise ConfigError("aggregation window must be at least 1")
    used = bundle.draws[-min(window, len(bundle)):]
    r_star = np.stack([predict_cells(s, bank, cells[:, 0], cells[:, 1]) for s in used])
    mean_r_hat = (100.0 * expit(r_star)).mean(axis=0)
    if len(used) > 1:
        std = r_star.std(axis=0, ddof=1)
    else:
        std = np.zeros(cells.shape[0])
    return Aggregate(mean_r_hat, std)


def chain_schedule(option: int, k: int) -> tuple[int, int]:
    """(warmup, samples) of the k-th step of a chain-length schedule.

    Option 1 grows warmup and samples together in a 3:5 ratio, option 2
    grows samples with no warmup, option 3 grows warmup with 5 samples.
    """
    if int(k) != k or k < 1:
        raise ConfigError("schedule step k must be a positive integer")
    k = int(k)
    if option == 1:
        return 3 * k, 5 * k
    if option == 2:
        return 0, 5 * k
    if option == 3:
        return 5 * k, 5
    raise ConfigError(f"unknown schedule option {option!r}; expected 1, 2 or 3")


def with_schedule(config: ChainConfig, option: int | None, k: int | None) -> ChainConfig:
    if option is None:
        return config
    warmup, samples = chain_schedule(option, 1 if k is None else k)
    return replace(config, warmup=warmup, samples=samples)

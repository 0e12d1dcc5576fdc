"""Active learning for Bayesian matrix factorization with side features."""

from .active import (PoolPartition, StrategyConfig, init_pool, run_active_loop,
                     select_kcenter_batch, select_passive_batch, select_uncertainty_batch)
from .data import (SyntheticConfig, generate_synthetic, load_features, load_ratings,
                   reduce_features, subset_sample)
from .harness import ExperimentConfig, run_experiment
from .model import FeatureBank, Hyperparams, ModelState, RatingsTable, predict_cell
from .sampler import ChainConfig, aggregate_predictions, chain_schedule, run_chain

__version__ = "0.1.0"

__all__ = [
    "ChainConfig", "ExperimentConfig", "FeatureBank", "Hyperparams", "ModelState",
    "PoolPartition", "RatingsTable", "StrategyConfig", "SyntheticConfig",
    "aggregate_predictions", "chain_schedule", "generate_synthetic", "init_pool",
    "load_features", "load_ratings", "predict_cell", "reduce_features", "run_active_loop",
    "run_chain", "run_experiment", "select_kcenter_batch", "select_passive_batch",
    "select_uncertainty_batch", "subset_sample",
]

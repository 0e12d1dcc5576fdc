"""Fit the model once with HMC and look at predictions and their spread.

Run with ``python3 demos/posterior_predictions.py``.
"""

import numpy as np

from active_bpmf import (ChainConfig, Hyperparams, SyntheticConfig, aggregate_predictions,
                         generate_synthetic, run_chain)
from active_bpmf.model import ModelState, predict_cell, sample_prior_state

ds = generate_synthetic(SyntheticConfig(n_faces=20, n_traits=5, true_latent_dim=2,
                                        ratings_per_cell=4, seed=4))
table, bank = ds.table, ds.bank
hyper = Hyperparams(latent_dim=4)

# Train on half the cells so the other half shows out-of-sample behaviour.
cell = table.face_id * bank.n_traits + table.trait_id
train = table.subset(np.flatnonzero(cell % 2 == 0))
init = sample_prior_state(bank, hyper, np.random.default_rng(0))
bundle = run_chain(init, train, bank, hyper, ChainConfig(warmup=200, samples=100, seed=5))
print(f"accept rate {bundle.accept_rate:.2f}, adapted step size {bundle.final_step_size:.4f}")

cells = [(f, t) for f in range(4) for t in range(bank.n_traits)]
agg = aggregate_predictions(bundle, bank, cells, window=10)

# Ground truth from the generating weights, on the same rating scale.
true_state = ModelState(ds.true_W_F, ds.true_W_T, 1.0, 1.0)
truth = [predict_cell(true_state, bank, f, t).r_hat
         for f, t in cells]
print("\nface trait  seen   truth   mean_r_hat  std(r*)")
for (f, t), m, s, y in zip(cells, agg.mean_r_hat, agg.std_r_star, truth):
    seen = "yes" if (f * bank.n_traits + t) % 2 == 0 else "no"
    print(f"{f:4d} {t:5d}  {seen:>4}  {y:6.1f}  {m:10.1f}  {s:7.3f}")

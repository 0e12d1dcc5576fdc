"""Uncertainty, k-center and passive querying on a small synthetic problem.

Run with ``python3 demos/active_vs_passive.py``. Takes well under a minute.
"""

import numpy as np

from active_bpmf import (ChainConfig, Hyperparams, StrategyConfig, SyntheticConfig,
                         generate_synthetic, run_active_loop)

# A 30-face x 6-trait world, 3 ratings per cell, generated by the model itself.
ds = generate_synthetic(SyntheticConfig(n_faces=30, n_traits=6, true_latent_dim=3,
                                        ratings_per_cell=3, noise_precision=4.0, seed=1))
print(f"{len(ds.table)} observations, face features {ds.bank.face_dim}-d, "
      f"trait features {ds.bank.trait_dim}-d")

# A short chain keeps the demo quick; the package defaults are longer.
hyper = Hyperparams(latent_dim=8)
chain = ChainConfig(warmup=15, samples=25, seed=3)

curves = {}
for kind in ("uncertainty", "kcenter", "passive"):
    strategy = StrategyConfig(kind, batch_size=6, budget=12, init_pool_size=10, seed=7)
    result = run_active_loop(ds.table, ds.bank, hyper, strategy, chain)
    curves[kind] = result.trace
    print(f"{kind:>11}: final test RMSE {result.trace.rows[-1].test_rmse:.2f}")

# Every arm starts from the same initial pool, so the first row agrees.
sizes = curves["passive"].column("train_size")
print("\ntrain  " + "  ".join(f"{k:>11}" for k in curves))
for i, n in enumerate(sizes):
    print(f"{n:5d}  " + "  ".join(f"{curves[k].column('test_rmse')[i]:11.2f}" for k in curves))

# k-center also records how well the labelled set covers the feature space.
radius = curves["kcenter"].column("coverage_radius")
print("\nk-center coverage radius:", np.round(radius[:-1], 2))

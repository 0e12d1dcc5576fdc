import math

import numpy as np

from active_bpmf.model import FeatureBank, Hyperparams, ModelState, RatingsTable, logit_transform


def random_instance(rng, K=2, Df=3, Dt=2, n_obs=5, repeat_cells=False, tau=None):
    """Small random table, bank, state and hyperparameters."""
    n_faces, n_traits = 3, 2
    bank = FeatureBank(rng.standard_normal((n_faces, Df)), rng.standard_normal((n_traits, Dt)))
    if repeat_cells:
        face = rng.integers(0, 2, n_obs)
        trait = rng.integers(0, 2, n_obs)
    else:
        face = rng.integers(0, n_faces, n_obs)
        trait = rng.integers(0, n_traits, n_obs)
    table = RatingsTable(np.arange(n_obs), face, trait, rng.uniform(2.0, 98.0, n_obs))
    state = ModelState(0.5 * rng.standard_normal((K, Df)), 0.5 * rng.standard_normal((K, Dt)),
                       rng.uniform(0.3, 2.0), rng.uniform(0.3, 2.0))
    hyper = Hyperparams(latent_dim=K, gamma_shape=rng.uniform(1.0, 3.0),
                        gamma_rate=rng.uniform(0.5, 2.0),
                        noise_precision=rng.uniform(0.5, 2.0) if tau is None else tau)
    return table, bank, state, hyper


def fd_gradient(fn, state, h=1e-5):
    """Central differences of ``fn`` over the packed unconstrained state vector."""
    K, Df = state.W_F.shape
    Dt = state.W_T.shape[1]
    q0 = state.pack()
    out = np.empty_like(q0)
    for i in range(q0.size):
        qp, qm = q0.copy(), q0.copy()
        qp[i] += h
        qm[i] -= h
        out[i] = (fn(ModelState.unpack(qp, K, Df, Dt)) - fn(ModelState.unpack(qm, K, Df, Dt))) / (2 * h)
    return out


CLI_SYNTH = {"n_faces": 10, "n_traits": 4, "feat_dim_face": 3, "feat_dim_trait": 2,
             "true_latent_dim": 2, "ratings_per_cell": 3}


def cli_experiment(data_dir, out_dir, repetitions=2):
    """Two-arm config over the CSV files written by ``gen-synthetic``."""
    chain = {"warmup": 3, "samples": 4, "leapfrog_steps": 4}
    return {
        "ratings": str(data_dir / "ratings.csv"),
        "face_features": str(data_dir / "face_features.csv"),
        "trait_features": str(data_dir / "trait_features.csv"),
        "arms": [
            {"strategy": {"kind": "uncertainty", "batch_size": 4, "budget": 2, "init_pool_size": 5},
             "chain": chain},
            {"strategy": {"kind": "passive", "batch_size": 4, "budget": 2, "init_pool_size": 5},
             "chain": chain, "schedule_option": 1, "schedule_k": 1},
        ],
        "repetitions": repetitions,
        "smoothing_window": 3,
        "ci_level": 0.95,
        "output_dir": str(out_dir),
        "master_seed": 77,
    }


def run_cli_twice(tmp_path, main):
    """Run every CLI command twice with identical inputs.

    Returns ``{command: (first_bytes, second_bytes)}`` for the files (or stdout)
    each command produces.
    """
    import json
    from contextlib import redirect_stdout
    from io import StringIO

    syn = tmp_path / "syn.json"
    syn.write_text(json.dumps(CLI_SYNTH))
    results = {}
    for tag in ("a", "b"):
        root = tmp_path / tag
        data = root / "data"
        assert main(["gen-synthetic", "--config", str(syn), "--out", str(data), "--seed", "12"]) == 0
        assert main(["reduce", "--input", str(data / "face_features.csv"), "--dim", "2",
                     "--out", str(root / "reduced.csv")]) == 0
        assert main(["subset", "--ratings", str(data / "ratings.csv"), "--faces", "5", "--traits", "2",
                     "--per-cell", "2", "--seed", "3", "--out", str(root / "subset.csv")]) == 0
        cfg = root / "exp.json"
        cfg.write_text(json.dumps(cli_experiment(data, root / "res")))
        assert main(["run", "--config", str(cfg), "--workers", "1"]) == 0
        buf = StringIO()
        with redirect_stdout(buf):
            assert main(["eval", "--predictions", str(root / "res/predictions/arm0_rep0.csv"),
                         "--ratings", str(data / "ratings.csv")]) == 0
        assert main(["aggregate", str(root / "res/traces"), "--window", "2",
                     "--out", str(root / "agg.csv")]) == 0
        outputs = {
            "gen-synthetic": b"".join((data / n).read_bytes() for n in sorted(p.name for p in data.iterdir())),
            "reduce": (root / "reduced.csv").read_bytes(),
            "subset": (root / "subset.csv").read_bytes(),
            "run": b"".join((root / "res/traces" / n).read_bytes()
                            for n in sorted(p.name for p in (root / "res/traces").iterdir())),
            "eval": buf.getvalue().encode(),
            "aggregate": (root / "agg.csv").read_bytes(),
        }
        for k, v in outputs.items():
            results.setdefault(k, []).append(v)
    return {k: tuple(v) for k, v in results.items()}


def line_problem(xs):
    """One face per coordinate on a line, a single all-zero trait, one observation per face."""
    n = len(xs)
    bank = FeatureBank(np.asarray(xs, dtype=float).reshape(-1, 1), [[0.0]])
    table = RatingsTable(np.arange(n), np.arange(n), np.zeros(n), np.full(n, 50.0))
    return bank, table


def points_problem(points):
    points = np.asarray(points, dtype=float)
    n = len(points)
    bank = FeatureBank(points, [[0.0]])
    return bank, RatingsTable(np.arange(n), np.arange(n), np.zeros(n), np.full(n, 50.0))


def sort_oracle(scores, candidates, p):
    pairs = sorted(zip(candidates.tolist(), scores.tolist()), key=lambda t: (-t[1], t[0]))
    return [c for c, _ in pairs[:p]]


def conjugate_instance():
    """1-D problem where W_F | (W_T, sigma, theta, tau) is Gaussian in closed form."""
    bank = FeatureBank([[0.8], [-1.2], [0.5], [1.5]], [[0.9]])
    ratings = [35.0, 70.0, 52.0, 20.0, 64.0, 41.0]
    faces = [0, 1, 2, 3, 0, 1]
    table = RatingsTable(np.arange(6), faces, np.zeros(6), ratings)
    hyper = Hyperparams(latent_dim=1, noise_precision=2.0)
    w_t, sigma = 1.3, 1.5
    x = bank.face_features[faces, 0] * w_t * bank.trait_features[0, 0]
    y = logit_transform(np.array(ratings), hyper.logit_clamp)
    precision = sigma + hyper.noise_precision * np.sum(x * x)
    mean = hyper.noise_precision * np.sum(x * y) / precision
    init = ModelState([[0.0]], [[w_t]], sigma, 0.7)
    return table, bank, hyper, init, mean, 1.0 / math.sqrt(precision)


def batch_means_se(x, n_batches=40):
    x = np.asarray(x)
    m = x[: len(x) // n_batches * n_batches].reshape(n_batches, -1).mean(axis=1)
    return m.std(ddof=1) / math.sqrt(n_batches)

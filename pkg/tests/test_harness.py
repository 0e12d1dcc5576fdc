import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from active_bpmf.errors import ConfigError, DomainError, IntegrityError
from active_bpmf.harness import (ExperimentConfig, aggregate_traces, confidence_interval, derive_seed,
                                 evaluate_rmse, read_trace, run_experiment, smooth_curve)
from active_bpmf.model import RatingsTable

TINY_SYNTH = {"n_faces": 8, "n_traits": 3, "feat_dim_face": 2, "feat_dim_trait": 2,
              "true_latent_dim": 2, "ratings_per_cell": 2, "seed": 3}
TINY_CHAIN = {"warmup": 2, "samples": 3, "leapfrog_steps": 3}


def tiny_config(tmp_path, arms=None, **kw):
    if arms is None:
        arms = [{"strategy": {"kind": "uncertainty", "batch_size": 3, "budget": 2, "init_pool_size": 4},
                 "chain": TINY_CHAIN}]
    d = {"synthetic": TINY_SYNTH, "arms": arms, "repetitions": 1, "smoothing_window": 1,
         "ci_level": 0.95, "output_dir": str(tmp_path / "out"), "master_seed": 5}
    d.update(kw)
    return ExperimentConfig.from_dict(d)


class TestEvaluateRmse:
    @staticmethod
    def table(ratings, cells):
        f, t = zip(*cells)
        return RatingsTable(np.arange(len(ratings)), f, t, ratings)

    def test_exact(self):
        t = self.table([30.0, 60.0], [(0, 0), (1, 0)])
        assert evaluate_rmse({(0, 0): 30.0, (1, 0): 60.0}, t) == 0.0

    def test_single(self):
        assert evaluate_rmse({(0, 0): 50.0}, self.table([40.0], [(0, 0)])) == pytest.approx(10.0)

    def test_two_residuals(self):
        t = self.table([11.0, 22.0], [(0, 0), (0, 1)])
        assert evaluate_rmse({(0, 0): 10.0, (0, 1): 20.0}, t) == pytest.approx(math.sqrt(2.5), rel=1e-12)
        assert evaluate_rmse({(0, 0): 10.0, (0, 1): 20.0}, t) == pytest.approx(1.58114, abs=1e-5)

    def test_shared_cell(self):
        t = self.table([40.0, 60.0], [(2, 1), (2, 1)])
        assert evaluate_rmse({(2, 1): 50.0}, t) == pytest.approx(10.0)

    def test_empty(self):
        with pytest.raises(DomainError):
            evaluate_rmse({}, RatingsTable.empty())

    def test_missing_prediction(self):
        with pytest.raises(IntegrityError, match="face 1"):
            evaluate_rmse({(0, 0): 1.0}, self.table([5.0], [(1, 0)]))


class TestSmoothCurve:
    def test_window_one_identity(self):
        s = [(1, 3.0), (2, -1.0), (5, 7.5)]
        assert smooth_curve(s, 1) == s

    @given(st.floats(-1e6, 1e6), st.integers(1, 30), st.integers(1, 9))
    def test_constant(self, c, n, w):
        out = smooth_curve([(i, c) for i in range(n)], w)
        np.testing.assert_allclose([y for _, y in out], c, rtol=1e-12)

    def test_boundary_truncated(self):
        out = smooth_curve([(10, 1.0), (20, 2.0), (30, 3.0)], 3)
        assert [x for x, _ in out] == [10, 20, 30]
        np.testing.assert_allclose([y for _, y in out], [1.5, 2.0, 2.5])

    def test_even_window(self):
        out = smooth_curve([(0, 1.0), (1, 2.0), (2, 4.0)], 2)
        np.testing.assert_allclose([y for _, y in out], [1.5, 3.0, 4.0])

    def test_nan_skipped(self):
        out = smooth_curve([(0, 1.0), (1, 3.0), (2, math.nan)], 3)
        np.testing.assert_allclose([y for _, y in out], [2.0, 2.0, 3.0])

    @pytest.mark.parametrize("w", [0, -2, 1.5])
    def test_bad_window(self, w):
        with pytest.raises(ConfigError):
            smooth_curve([(0, 1.0)], w)


class TestConfidenceInterval:
    def test_identical(self):
        b = confidence_interval([[1.0, 4.0], [1.0, 4.0], [1.0, 4.0]])
        np.testing.assert_array_equal(b.lower, b.upper)
        np.testing.assert_array_equal(b.mean, [1.0, 4.0])

    def test_three_points(self):
        b = confidence_interval([[1.0], [2.0], [3.0]], 0.95)
        assert b.mean[0] == pytest.approx(2.0)
        assert b.upper[0] - 2.0 == pytest.approx(4.3027 / math.sqrt(3), abs=1e-4)
        assert b.upper[0] - 2.0 == pytest.approx(2.4841, abs=1e-4)

    @given(st.lists(st.lists(st.floats(-100, 100), min_size=4, max_size=4), min_size=2, max_size=6))
    def test_symmetric(self, curves):
        b = confidence_interval(curves, 0.9)
        np.testing.assert_allclose(b.upper - b.mean, b.mean - b.lower, atol=1e-9)
        assert np.all(b.lower <= b.upper + 1e-12)

    def test_single_repetition_zero_width(self):
        b = confidence_interval([[3.0, 2.0]])
        np.testing.assert_array_equal(b.lower, [3.0, 2.0])
        np.testing.assert_array_equal(b.upper, [3.0, 2.0])

    def test_mismatched(self):
        with pytest.raises(IntegrityError):
            confidence_interval([[1.0, 2.0], [1.0]])


class TestConfig:
    def test_json_round_trip(self, tmp_path):
        cfg = tiny_config(tmp_path)
        p = tmp_path / "c.json"
        p.write_text(json.dumps(cfg.to_dict()))
        assert ExperimentConfig.from_json(p) == cfg

    def test_paths_relative_to_file(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"ratings": "r.csv", "face_features": "f.csv", "trait_features": "t.csv",
                                 "arms": [{"strategy": {"kind": "passive"}}]}))
        cfg = ExperimentConfig.from_json(p)
        assert cfg.resolve(cfg.ratings) == tmp_path / "r.csv"

    @pytest.mark.parametrize("patch", [
        {"arms": []},
        {"repetitions": 0},
        {"smoothing_window": 0},
        {"ci_level": 1.0},
        {"master_seed": -1},
        {"ratings": "r.csv"},
        {"bogus": 1},
    ])
    def test_invalid(self, tmp_path, patch):
        with pytest.raises(ConfigError):
            tiny_config(tmp_path, **patch)

    def test_invalid_arm(self, tmp_path):
        with pytest.raises(ConfigError):
            tiny_config(tmp_path, arms=[{"strategy": {"kind": "passive"}, "schedule_option": 4}])
        with pytest.raises(ConfigError):
            tiny_config(tmp_path, arms=[{"strategy": {"kind": "passive", "speed": 2}}])


class TestSeeds:
    def test_distinct(self):
        seeds = {derive_seed(123, a, r) for a in range(20) for r in range(20)}
        assert len(seeds) == 400

    def test_stable(self):
        assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
        assert derive_seed(1, 2, 3) != derive_seed(1, 3, 2)


class TestRunExperiment:
    def test_single_run_aggregate_equals_raw(self, tmp_path):
        arms = [{"strategy": {"kind": "passive", "batch_size": 2, "budget": 0, "init_pool_size": 5},
                 "chain": TINY_CHAIN}]
        cfg = tiny_config(tmp_path, arms=arms, smoothing_window=3)
        run_experiment(cfg)
        raw = read_trace(tmp_path / "out/traces/arm0_rep0.csv")
        agg = read_trace(tmp_path / "out/aggregates/arm0.csv")
        assert len(raw) == 1 and len(agg) == 1
        assert agg[0]["mean"] == raw[0]["test_rmse"]
        assert agg[0]["lower"] == agg[0]["upper"] == raw[0]["test_rmse"]

    def test_file_count_and_determinism(self, tmp_path):
        arms = [{"strategy": {"kind": "uncertainty", "batch_size": 3, "budget": 2, "init_pool_size": 4},
                 "chain": TINY_CHAIN},
                {"strategy": {"kind": "kcenter", "batch_size": 3, "budget": 2, "init_pool_size": 4},
                 "chain": TINY_CHAIN, "schedule_option": 2, "schedule_k": 1}]
        cfg = tiny_config(tmp_path, arms=arms, repetitions=3, smoothing_window=2)
        m1 = run_experiment(cfg)
        out = tmp_path / "out"
        traces = sorted(p.name for p in (out / "traces").iterdir())
        assert len(traces) == 6 and len(list((out / "aggregates").iterdir())) == 2
        first = {n: (out / "traces" / n).read_bytes() for n in traces}
        m2 = run_experiment(cfg, workers=2)
        assert {n: (out / "traces" / n).read_bytes() for n in traces} == first
        assert [r["seed"] for r in m1["runs"]] == [r["seed"] for r in m2["runs"]]
        assert len({r["seed"] for r in m1["runs"]}) == 6
        assert read_trace(out / "traces/arm1_rep0.csv")[0]["chain_samples"] == 5

    def test_reaggregation_exact(self, tmp_path):
        cfg = tiny_config(tmp_path, repetitions=3, smoothing_window=3)
        run_experiment(cfg)
        out = tmp_path / "out"
        rows = aggregate_traces([out / f"traces/arm0_rep{r}.csv" for r in range(3)], 3, 0.95)
        stored = read_trace(out / "aggregates/arm0.csv")
        for a, b in zip(rows, stored):
            assert a["mean"] == b["mean"] and a["lower"] == b["lower"] and a["upper"] == b["upper"]

    def test_manifest(self, tmp_path):
        cfg = tiny_config(tmp_path)
        run_experiment(cfg)
        m = json.loads((tmp_path / "out/manifest.json").read_text())
        assert ExperimentConfig.from_dict(m["config"]) == cfg
        assert m["versions"]["numpy"] == np.__version__
        assert m["runs"][0]["seed"] == derive_seed(5, 0, 0)
        assert len(m["runs"][0]["iteration_wallclock"]) == 3
        assert m["wallclock_seconds"] > 0 and m["arm_errors"] == {}

    def test_failing_arm_isolated(self, tmp_path):
        # 48 observations cannot seed an initial pool of 100
        arms = [{"strategy": {"kind": "passive", "batch_size": 2, "budget": 1, "init_pool_size": 100},
                 "chain": TINY_CHAIN},
                {"strategy": {"kind": "passive", "batch_size": 2, "budget": 1, "init_pool_size": 4},
                 "chain": TINY_CHAIN}]
        m = run_experiment(tiny_config(tmp_path, arms=arms, repetitions=2))
        assert set(m["arm_errors"]) == {"0"}
        out = tmp_path / "out"
        assert not (out / "aggregates/arm0.csv").exists()
        assert (out / "aggregates/arm1.csv").exists()

    def test_bad_workers(self, tmp_path):
        with pytest.raises(ConfigError):
            run_experiment(tiny_config(tmp_path), workers=0)

import hashlib
import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mhe_soc import benchmark, cli, ecm, plant
from mhe_soc.config import RunConfig
from mhe_soc.estimators import SocEstimator
from mhe_soc.exceptions import ConfigError, EmptyRange
from mhe_soc.metrics import rmse
from mhe_soc.profiles import HppcProfile, NoiseSpec


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestRmse:
    def test_identical(self):
        assert rmse([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 0.0

    @given(st.floats(-10, 10), st.integers(1, 50))
    def test_constant_offset(self, d, n):
        truth = np.linspace(0, 1, n)
        assert rmse(truth + d, truth) == pytest.approx(abs(d), rel=1e-9, abs=1e-12)

    def test_from_t(self):
        t = np.arange(5.0)
        assert rmse([9, 9, 0, 0, 0], [0, 0, 0, 0, 0], t, from_t=2.0) == 0.0

    def test_empty_range(self):
        with pytest.raises(EmptyRange):
            rmse([1.0], [1.0], [0.0], from_t=5.0)


class TestConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.data["estimator"]["N"] == 30 and cfg.data["estimator"]["n_ts"] == 20
        assert cfg.mhe_config().schedule.span_steps == 580

    def test_unknown_key_rejected_with_path(self):
        with pytest.raises(ConfigError, match="estimator"):
            RunConfig({"estimator": {"nonsense": 1}})

    def test_barrier_floor(self):
        with pytest.raises(ConfigError, match="barrier_M"):
            RunConfig({"estimator": {"barrier_M": 10}})

    def test_mode_specific_keys(self):
        with pytest.raises(ConfigError):
            RunConfig({"estimator": {"mode": "multi_rate", "N": 10}})
        with pytest.raises(ConfigError):
            RunConfig({"estimator": {"mode": "standard", "fast": {"N": 5}}})

    def test_filtered_and_parallel_builders(self):
        filt = RunConfig({"estimator": {"mode": "filtered"}}).mhe_config()
        assert filt.schedule.N == 10 and filt.schedule.n_channels == 3
        par = RunConfig({"estimator": {"mode": "parallel", "fast": {"n_ts": 3}}}).parallel_config()
        assert par.fast.schedule.n_ts == 3 and par.fast.theta_selection == ecm.FROZEN
        assert par.slow.schedule.kind == "multi_rate"

    def test_hash_tracks_content(self):
        assert RunConfig().hash() == RunConfig({}).hash()
        assert RunConfig().hash() != RunConfig({"plant": {"noise": {"seed": 1}}}).hash()

    def test_missing_params_file(self, tmp_path):
        cfg = RunConfig({"plant": {"params": "nope.json"}}, base_dir=tmp_path)
        with pytest.raises(ConfigError):
            cfg.plant_params()


class TestCli:
    def test_simulate_deterministic(self, tmp_path):
        for name in ("a", "b"):
            assert cli.main(["simulate", "--out-dir", str(tmp_path / name), "--horizon", "300", "--seed", "2"]) == 0
        assert _sha(tmp_path / "a" / "truth.csv") == _sha(tmp_path / "b" / "truth.csv")
        assert _sha(tmp_path / "a" / "truth.json") == _sha(tmp_path / "b" / "truth.json")

    def test_estimate_outputs(self, tmp_path):
        assert cli.main(["simulate", "--out-dir", str(tmp_path), "--horizon", "900"]) == 0
        assert cli.main(["estimate", "--truth", str(tmp_path / "truth.csv"), "--out-dir", str(tmp_path / "e")]) == 0
        header = (tmp_path / "e" / "estimate.csv").read_text().splitlines()[0].split(",")
        assert header[:9] == ["t", "Z_true", "Z_hat", "V1_hat", "Vb_true", "Vb_hat", "cost", "barrier_active",
                              "wall_time_s"]
        assert len(header) == 9 + 12
        summary = json.loads((tmp_path / "e" / "summary.json").read_text())
        for key in ("rmse_Z", "rmse_Vb", "mean_wall_time_s", "max_wall_time_s", "config_sha256", "rng", "seed"):
            assert key in summary

    def test_parallel_mode_two_csvs(self, tmp_path):
        assert cli.main(["estimate", "--mode", "parallel", "--horizon", "700", "--out-dir", str(tmp_path)]) == 0
        assert (tmp_path / "estimate_fast.csv").exists() and (tmp_path / "estimate_slow.csv").exists()
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert set(summary["wall_time_s"]) == {"fast", "slow"}

    def test_variability_outputs(self, tmp_path):
        assert cli.main(["variability", "--nts", "1,5", "--horizon", "600", "--out-dir", str(tmp_path)]) == 0
        lines = (tmp_path / "variability_nts5.csv").read_text().splitlines()
        assert lines[0] == "t,delta_y" and len(lines) > 1

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"plant": {"z0": 3}}))
        assert cli.main(["simulate", "--config", str(bad), "--out-dir", str(tmp_path)]) == 1
        assert cli.main(["simulate", "--config", str(tmp_path / "missing.json")]) == 1
        assert cli.main(["variability", "--nts", "a,b", "--out-dir", str(tmp_path)]) == 1

    def test_missing_truth_exit_code(self, tmp_path):
        assert cli.main(["estimate", "--truth", str(tmp_path / "none.csv"), "--out-dir", str(tmp_path)]) == 1

    def test_numerical_failure_exit_code(self, tmp_path, monkeypatch):
        from mhe_soc.exceptions import NonFiniteState

        def boom(*args, **kwargs):
            raise NonFiniteState("overflow")

        monkeypatch.setattr(cli.plant, "simulate", boom)
        assert cli.main(["simulate", "--out-dir", str(tmp_path)]) == 2


class TestBenchmark:
    def test_suite_rows(self):
        labels = [row.label for row in benchmark.suite("paper-tables")]
        assert labels == ["standard-nts1", "standard-nts20", "multi-rate", "filtered-N20", "filtered-N10", "parallel"]
        with pytest.raises(ValueError):
            benchmark.suite("other")

    def test_thread_cap(self, monkeypatch):
        monkeypatch.setenv("MHE_SOC_THREADS", "3")
        assert benchmark.thread_cap() == 3
        monkeypatch.setenv("MHE_SOC_THREADS", "x")
        with pytest.raises(ValueError):
            benchmark.thread_cap()

    def test_threaded_rows_match_serial(self, monkeypatch):
        params = ecm.default_parameters()
        truth = plant.simulate(params, HppcProfile.for_capacity(params.capacity_Cn), NoiseSpec(seed=1),
                               horizon_s=700)
        rows = benchmark.suite("paper-tables")[1:3]
        guess = ecm.perturbed_guess(params)
        serial = benchmark.report_rows(benchmark.run_suite(rows, truth, guess, timing=False), timing=False)
        monkeypatch.setenv("MHE_SOC_THREADS", "2")
        threaded = benchmark.report_rows(benchmark.run_suite(rows, truth, guess, timing=False), timing=False)
        assert serial == threaded


@pytest.fixture(scope="module")
def data():
    params = ecm.default_parameters()
    log = plant.simulate(params, HppcProfile.for_capacity(params.capacity_Cn), NoiseSpec(std_dev=0.0),
                         horizon_s=1500)
    return np.column_stack([log.t, log.I]), log.Vb_noisy, log.Z


class TestSocEstimator:
    def test_get_params(self):
        est = SocEstimator(n_ts=5)
        assert est.get_params()["n_ts"] == 5
        assert est.set_params(N=10).N == 10

    def test_fit_predict(self, data):
        X, y, z = data
        est = SocEstimator(theta_selection=ecm.FROZEN, initial_params=ecm.default_parameters()).fit(X, y)
        pred = est.predict(X)
        assert pred.shape == z.shape
        late = X[:, 0] >= 1000
        assert est.score(X[late], z[late]) > -1e-3
        assert est.score(X, z) > -5e-3

    def test_not_fitted(self, data):
        from sklearn.exceptions import NotFittedError

        with pytest.raises(NotFittedError):
            SocEstimator().predict(data[0])

    def test_validation(self, data):
        X, y, _ = data
        with pytest.raises(ValueError):
            SocEstimator().fit(X[:, :1], y)
        with pytest.raises(ValueError):
            SocEstimator().fit(X, y[:-1])
        uneven = X.copy()
        uneven[5, 0] += 0.5
        with pytest.raises(ValueError):
            SocEstimator().fit(uneven, y)

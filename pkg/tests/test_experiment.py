import json
import os

import pytest

from riskmonitor import experiment
from riskmonitor.betting import BettingStrategy
from riskmonitor.core import DomainError, ThresholdGrid, WindowConfig
from riskmonitor.experiment import (WORKERS_ENV, ConfigError, ExperimentConfig, clopper_pearson_lower,
                                    emit_trace, load_bundle, run_experiment, validate_guarantees)
from riskmonitor.monitor import common_shift_delays, paired_delays, run_monitor, shift_delays
from riskmonitor.streams import RiskProfileStream


def small_config(outdir, **changes):
    settings = dict(resolution=11, horizon=300, trials=5, output_dir=str(outdir), progress=False)
    settings.update(changes)
    return ExperimentConfig(**settings)


def null_config(outdir, **changes):
    """i.i.d. stream restricted to thresholds whose risk stays below ε."""
    settings = dict(schedule="iid", grid_lo=0.3, resolution=8, horizon=300, trials=20,
                    windows=[None], batches=[1], trackers=["wealth_mult", "wealth_sum", "wealth_eb"])
    settings.update(changes)
    return small_config(outdir, **settings)


class TestConfig:

    def test_validate_lists_every_problem(self):
        config = ExperimentConfig(epsilon=1.5, delta=0.0, trackers=["bogus"], batches=[0])
        with pytest.raises(ConfigError) as info:
            config.validate()
        errors = info.value.errors
        assert len(errors) >= 4
        assert any("epsilon" in e for e in errors)
        assert any("delta" in e for e in errors)
        assert any("bogus" in e for e in errors)

    def test_defaults_are_valid(self):
        ExperimentConfig().validate()

    def test_fixed_rate_domain(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(fixed_rate=10.0).validate()

    def test_eb_tracker_rejects_agra_rates(self):
        config = ExperimentConfig(strategies={"wealth_mult": "agra", "wealth_sum": "agra",
                                              "wealth_eb": "agra"})
        with pytest.raises(ConfigError) as info:
            config.validate()
        assert any("wealth_eb" in e for e in info.value.errors)

    def test_eb_tracker_accepts_agra_above_half(self):
        # the AGRA cap 0.5/ε drops below 1 once ε > 1/2
        ExperimentConfig(epsilon=0.6, trackers=["wealth_eb"],
                         strategies={"wealth_eb": "agra"}).validate()

    def test_reverse_tracker_fixed_rate_domain(self):
        # 1/(1-ε) = 1.111... at ε = 0.1
        config = ExperimentConfig(trackers=["wealth_reverse_iid"], schedule="iid",
                                  strategies={"wealth_reverse_iid": "fixed"}, fixed_rate=1.5)
        with pytest.raises(ConfigError) as info:
            config.validate()
        assert any("wealth_reverse_iid" in e for e in info.value.errors)
        config.fixed_rate = 1.1
        config.validate()

    def test_strict_needs_finite_windows(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(strict_window=True).validate()
        ExperimentConfig(strict_window=True, windows=[50, 10]).validate()

    def test_score_file_needs_single_trial(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("t,score,source\n1,0.5,in\n")
        with pytest.raises(ConfigError):
            ExperimentConfig(input_path=str(path), trials=3).validate()

    def test_hash_ignores_output_and_workers(self):
        base = ExperimentConfig()
        assert base.config_hash() == ExperimentConfig(output_dir="elsewhere", workers=4,
                                                      progress=False).config_hash()
        assert base.config_hash() != ExperimentConfig(seed=1).config_hash()

    def test_from_file(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"epsilon": 0.2, "windows": [None, 20]}))
        config = ExperimentConfig.from_file(str(path))
        assert config.epsilon == 0.2 and config.windows == [None, 20]

    def test_unknown_field(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"epsilon": 0.2, "windw": 20}))
        with pytest.raises(ConfigError, match="windw"):
            ExperimentConfig.from_file(str(path))

    def test_workers_from_environment(self, monkeypatch):
        monkeypatch.setenv(WORKERS_ENV, "3")
        assert ExperimentConfig.with_environment().workers == 3
        assert ExperimentConfig.with_environment(workers=2).workers == 2
        monkeypatch.setenv(WORKERS_ENV, "many")
        with pytest.raises(ConfigError):
            ExperimentConfig.with_environment()


class TestRunExperiment:

    def test_smoke(self, tmp_path):
        bundle = run_experiment(small_config(tmp_path))
        assert len(bundle.summary) == 4 * 3 * 4
        for name in ("summary.csv", "records.csv", "trace.csv", "metadata.json"):
            assert (tmp_path / name).exists()
        with open(tmp_path / "metadata.json") as f:
            metadata = json.load(f)
        assert metadata["rejection_threshold"] == 10
        assert metadata["burn_in"] == {"1": 100, "10": 10, "50": 2}
        assert metadata["config_hash"] == small_config(tmp_path).config_hash()
        assert "output_dir" not in metadata["config"]

    def test_summary_is_reproducible(self, tmp_path):
        config = dict(windows=[None, 50], batches=[1, 10], trackers=["running_risk", "wealth_eb"])
        run_experiment(small_config(tmp_path / "a", **config))
        run_experiment(small_config(tmp_path / "b", **config))
        for name in ("summary.csv", "records.csv", "trace.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_trial_blocks(self):
        assert experiment.trial_blocks(5, 1) == [range(0, 5)]
        assert experiment.trial_blocks(5, 2) == [range(0, 3), range(3, 5)]
        assert experiment.trial_blocks(2, 4) == [range(0, 1), range(1, 2)]

    def test_workers_split_trials(self, tmp_path):
        # a single batch size still spreads over the workers
        config = dict(windows=[None, 10], batches=[1], trackers=["running_risk", "wealth_mult"])
        run_experiment(small_config(tmp_path / "serial", **config))
        bundle = run_experiment(small_config(tmp_path / "parallel", workers=2, **config))
        assert sorted({r.trial for r in bundle.records[("none", 1, "wealth_mult")]}) == list(range(5))
        for name in ("summary.csv", "records.csv", "trace.csv"):
            assert (tmp_path / "serial" / name).read_bytes() == \
                (tmp_path / "parallel" / name).read_bytes()

    def test_records_round_trip(self, tmp_path):
        bundle = run_experiment(small_config(tmp_path, windows=[None], batches=[10]))
        loaded = load_bundle(str(tmp_path))
        assert loaded.records == bundle.records
        assert len(loaded.summary) == len(bundle.summary)
        assert loaded.trials == 5

    def test_trace_rows(self, tmp_path):
        run_experiment(small_config(tmp_path, windows=[None], batches=[1], trackers=["wealth_mult"]))
        lines = (tmp_path / "trace.csv").read_text().splitlines()
        assert lines[0] == ",".join(experiment.TRACE_COLUMNS)
        assert len(lines) - 1 == 300 * (11 + 1)

    def test_partial_outputs_removed(self, tmp_path, monkeypatch):
        def fail(blocks, path):
            raise OSError("disk full")
        monkeypatch.setattr(experiment, "emit_trace", fail)
        with pytest.raises(OSError):
            run_experiment(small_config(tmp_path, windows=[None], batches=[1]))
        assert not any(name.endswith((".csv", ".json")) for name in os.listdir(tmp_path))

    def test_stream_shorter_than_horizon(self, tmp_path):
        path = tmp_path / "scores.csv"
        path.write_text("t,score,source\n1,0.5,in\n2,0.4,out\n")
        config = small_config(tmp_path, input_path=str(path), trials=1, horizon=5,
                              windows=[None], batches=[1])
        with pytest.raises(DomainError):
            run_experiment(config, write=False)

    def test_score_file(self, tmp_path):
        path = tmp_path / "scores.csv"
        rows = ["t,score"] + [f"{t},{0.9 if t % 3 else 0.1}" for t in range(1, 151)]
        path.write_text("\n".join(rows) + "\n")
        config = small_config(tmp_path, input_path=str(path), task="cls", trials=1, horizon=150,
                              windows=[None], batches=[1], trackers=["wealth_mult"])
        bundle = run_experiment(config, write=False)
        records = bundle.records[("none", 1, "wealth_mult")]
        # Every score sits below the top threshold
        assert all(r.tau is not None for r in records if r.psi > 0.9)
        assert all(r.tau is None for r in records if r.psi <= 0.1)
        assert not any(r.false_alarm for r in records)


class TestEmitTrace:

    def test_rows_per_step(self, tmp_path, spec):
        grid = ThresholdGrid((0.2, 0.8))
        stream = RiskProfileStream(lambda t: 0.5, 2, 3)
        result = run_monitor(grid, spec, WindowConfig(), "wealth_mult", BettingStrategy("agra"),
                             stream, 3)
        path = tmp_path / "trace.csv"
        emit_trace([result], str(path))
        lines = path.read_text().splitlines()
        assert len(lines) == 1 + 3 * (2 + 1)
        assert lines[1].startswith("none,1,wealth_mult,1,0.20000000000000001,")
        assert lines[3] == "none,1,wealth_mult,1,,,,2"


class TestGuarantees:

    def test_clopper_pearson(self):
        assert clopper_pearson_lower(0, 50) == 0.0
        assert clopper_pearson_lower(5, 50) < 0.1
        assert clopper_pearson_lower(20, 50) > 0.1

    def test_empty_bundle_fails(self):
        report = validate_guarantees(experiment.ExperimentBundle({"epsilon": 0.1, "delta": 0.1,
                                                                  "trials": 0}, [], {}))
        assert not report.passed
        assert "no trials" in report.format()

    def test_null_stream_passes(self, tmp_path):
        bundle = run_experiment(null_config(tmp_path), write=False)
        report = validate_guarantees(bundle)
        assert len(report.checks) == 3
        assert report.passed, report.format()

    def test_loaded_bundle(self, tmp_path):
        run_experiment(null_config(tmp_path, trackers=["wealth_mult"]))
        report = validate_guarantees(load_bundle(str(tmp_path)), confidence=0.99)
        assert report.passed

    def test_running_risk_fails(self, tmp_path):
        bundle = run_experiment(null_config(tmp_path, windows=[10], trackers=["running_risk"]),
                                write=False)
        assert validate_guarantees(bundle).message == "no matching trackers"
        report = validate_guarantees(bundle, trackers=("running_risk",))
        assert not report.passed
        assert report.checks[0].worst_psi == pytest.approx(0.3)


@pytest.mark.slow
class TestStepwiseSweep:
    """Stepwise TER stream whose outliers mostly score low, so thresholds
    from 0.3 up start risk-controlled and are violated from t=401 or t=601."""

    TRIALS = 50

    @pytest.fixture(scope="class")
    def bundle(self, tmp_path_factory):
        config = ExperimentConfig(resolution=21, horizon=1500, trials=self.TRIALS,
                                  windows=[None, 50, 10], batches=[1, 10, 50],
                                  inlier_beta=[1, 8], outlier_beta=[1, 3],
                                  output_dir=str(tmp_path_factory.mktemp("sweep")), progress=False)
        return run_experiment(config, write=False)

    def row(self, bundle, window, batch, tracker):
        return next(r for r in bundle.summary
                    if (r["window"], r["batch"], r["tracker"]) == (window, batch, tracker))

    def mean_delays(self, bundle, key_a, key_b):
        a, b = paired_delays(bundle.records[key_a], bundle.records[key_b])
        assert a.size > 0
        return a.mean(), b.mean()

    def test_wealth_trackers_keep_guarantee(self, bundle):
        report = validate_guarantees(bundle)
        assert report.passed, report.format()

    @pytest.mark.parametrize("batch", [1, 10, 50])
    @pytest.mark.parametrize("tracker", ["wealth_mult", "wealth_sum", "wealth_eb"])
    def test_wealth_trackers_no_excess_false_alarms(self, bundle, tracker, batch):
        assert self.row(bundle, "none", batch, tracker)["fp_above_delta"] == 0

    def test_running_risk_raises_false_alarms(self, bundle):
        assert self.row(bundle, "10", 1, "running_risk")["fp_positive"] > 0.5

    def test_shifted_thresholds(self, bundle):
        records = bundle.records[("none", 1, "wealth_mult")]
        onsets = {r.psi: r.tau_star for r in records if r.trial == 0}
        assert {onsets[psi] for psi in onsets if psi < 0.25} == {1}
        assert {onsets[psi] for psi in onsets if psi >= 0.3} == {401, 601}
        assert len(shift_delays(records, 1500)) >= 0.9 * 15 * self.TRIALS

    def test_detection_order(self, bundle):
        keys = [("none", 1, kind) for kind in ("running_risk", "wealth_mult", "wealth_sum", "wealth_eb")]
        running, mult, summation, eb = common_shift_delays(1500, *(bundle.records[k] for k in keys))
        assert running.size >= 10 * self.TRIALS
        assert running.mean() < mult.mean() < summation.mean()
        assert mult.mean() < eb.mean()

    def test_summary_carries_shift_delays(self, bundle):
        running = self.row(bundle, "none", 1, "running_risk")
        mult = self.row(bundle, "none", 1, "wealth_mult")
        assert mult["shift_delays"] >= 0.9 * 15 * self.TRIALS
        assert running["shift_delay_mean"] < mult["shift_delay_mean"]

    @pytest.mark.parametrize("smaller, larger", [(1, 10), (10, 50)])
    def test_batching_shortens_delay(self, bundle, smaller, larger):
        small, large = self.mean_delays(bundle, ("none", smaller, "wealth_mult"),
                                        ("none", larger, "wealth_mult"))
        assert large <= 1.05 * small

    def test_window_adapts_faster(self, bundle):
        unbounded, windowed = self.mean_delays(bundle, ("none", 1, "wealth_mult"), ("50", 1, "wealth_mult"))
        assert windowed <= 1.05 * unbounded

    def test_record_counts(self, bundle):
        for row in bundle.summary:
            assert row["records"] == self.TRIALS * 21
            assert row["censored"] + row["delays"] <= row["records"]

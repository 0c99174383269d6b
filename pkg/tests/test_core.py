import numpy as np
import pytest

from riskmonitor.core import (DomainError, LossRecord, RiskSpec, RunningMoments, ThresholdGrid,
                              WindowConfig, check_losses, update_moments)


class TestRiskSpec:

    def test_rejection_threshold(self):
        spec = RiskSpec(0.1, 0.1)
        assert spec.rejection_threshold == pytest.approx(10.0, rel=1e-15)
        assert spec.log_rejection_threshold == pytest.approx(np.log(10))

    @pytest.mark.parametrize("epsilon,delta", [(0, 0.1), (1, 0.1), (-0.5, 0.1),
                                               (0.1, 0), (0.1, 1), (0.1, 2)])
    def test_out_of_range(self, epsilon, delta):
        with pytest.raises(DomainError):
            RiskSpec(epsilon, delta)


class TestThresholdGrid:

    def test_linspace(self):
        grid = ThresholdGrid.linspace(0, 1, 101)
        assert grid.resolution == 101
        assert grid[0] == 0.0 and grid[-1] == 1.0
        assert np.all(np.diff(grid.array) > 0)

    def test_naval_range(self):
        grid = ThresholdGrid.linspace(0, 0.05, 11)
        assert len(grid) == 11
        assert max(grid) == pytest.approx(0.05)

    @pytest.mark.parametrize("values", [(0.1, 0.1), (0.5, 0.2), ()])
    def test_rejects_unordered_or_empty(self, values):
        with pytest.raises(DomainError):
            ThresholdGrid(values)

    def test_rejects_values_outside_bounds(self):
        with pytest.raises(DomainError):
            ThresholdGrid((0.1, 0.6), lo=0.0, hi=0.5)
        with pytest.raises(DomainError):
            ThresholdGrid((0.1,), lo=-0.1, hi=0.5)


class TestLosses:

    @pytest.mark.parametrize("z", [[-0.01], [1.01], [np.nan], [0.2, np.inf]])
    def test_out_of_range_losses_rejected(self, z):
        with pytest.raises(DomainError):
            check_losses(z)

    def test_boundaries_accepted(self):
        assert check_losses([0, 1]).tolist() == [0.0, 1.0]

    def test_record_from_batch(self):
        record = LossRecord.from_batch(3, [[0, 1], [1, 1], [0, 1], [1, 0]])
        assert record.t == 3
        assert record.batch_size == 4
        assert record.values.tolist() == [0.5, 0.75]

    def test_record_is_read_only(self):
        record = LossRecord(1, [0.1, 0.2])
        with pytest.raises(ValueError):
            record.values[0] = 0.5

    def test_record_time_starts_at_one(self):
        with pytest.raises(DomainError):
            LossRecord(0, [0.1])


class TestWindowConfig:

    @pytest.mark.parametrize("batch,burn_in", [(1, 100), (3, 33), (10, 10), (50, 2), (200, 0)])
    def test_default_burn_in(self, batch, burn_in):
        assert WindowConfig(batch=batch).burn_in_steps == burn_in

    def test_burn_in_override(self):
        assert WindowConfig(batch=10, burn_in=0).burn_in_steps == 0

    def test_invalid(self):
        with pytest.raises(DomainError):
            WindowConfig(window=0)
        with pytest.raises(DomainError):
            WindowConfig(batch=0)
        with pytest.raises(DomainError):
            WindowConfig(strict=True)


class TestRunningMoments:

    def test_seeding(self):
        m = RunningMoments.initial(2, 0.1)
        assert m.count == 0
        assert m.mean.tolist() == [0.1, 0.1]
        assert m.var.tolist() == [0.25, 0.25]

    def test_single_observation(self):
        m = update_moments(RunningMoments.initial(1, 0.1), 0.5)
        assert m.count == 1
        assert m.mean[0] == 0.5
        assert m.var[0] == 0.0

    def test_population_variance(self):
        m = RunningMoments.initial(1, 0.1).update(0).update(1)
        assert m.mean[0] == pytest.approx(0.5)
        assert m.var[0] == pytest.approx(0.25)

    def test_constant_sequence(self):
        m = RunningMoments.initial(1, 0.1)
        for _ in range(3):
            m = m.update(0.1)
        assert m.mean[0] == pytest.approx(0.1)
        assert m.var[0] == pytest.approx(0.0, abs=1e-15)

    def test_out_of_range_rejected(self):
        with pytest.raises(DomainError):
            RunningMoments.initial(1, 0.1).update(1.5)

    def test_update_does_not_mutate(self):
        m = RunningMoments.initial(1, 0.1)
        m.update(1.0)
        assert m.count == 0 and m.mean[0] == 0.1

    @pytest.mark.parametrize("window", [None, 4])
    def test_reset_equals_fresh(self, window):
        m = RunningMoments.initial(3, 0.2, window)
        for z in np.linspace(0, 1, 7):
            m = m.update(z)
        assert m.reset() == RunningMoments.initial(3, 0.2, window)

    @pytest.mark.parametrize("window", [1, 5, 50])
    def test_window_matches_tail_moments(self, window):
        rng = np.random.default_rng(window)
        z = rng.random(200)
        m = RunningMoments.initial(1, 0.1, window)
        for t in range(200):
            m = m.update(z[t])
            tail = z[max(0, t+1-window):t+1]
            assert m.retained == len(tail)
            assert m.mean[0] == pytest.approx(tail.mean(), rel=1e-12, abs=1e-15)
            assert m.var[0] == pytest.approx(tail.var(), rel=1e-9, abs=1e-15)

    def test_unwindowed_matches_numpy(self):
        z = np.random.default_rng(0).random((300, 4))
        m = RunningMoments.initial(4, 0.1)
        for row in z:
            m = m.update(row)
        np.testing.assert_allclose(m.mean, z.mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(m.var, z.var(axis=0), rtol=1e-9)
        assert np.all((m.var >= 0) & (m.var <= 0.25))

from math import log, sqrt

import numpy as np
import pytest

from riskmonitor.betting import BettingStrategy, rate_agra, rate_eb, rate_fixed
from riskmonitor.core import DomainError, RiskSpec, RunningMoments
from riskmonitor.trackers import Tracker


def moments(mean, var, count=10):
    return RunningMoments(count, np.atleast_1d(np.asarray(mean, dtype=float)),
                          np.atleast_1d(np.asarray(var, dtype=float)), 0.1)


class TestAgra:

    def test_closed_form(self, spec):
        rate = rate_agra(spec, moments(0.5, 0.05))
        assert rate[0] == pytest.approx(0.4 / 0.21, rel=1e-12)
        assert rate[0] == pytest.approx(1.9047619047619047, rel=1e-9)

    def test_zero_gap(self, spec):
        assert rate_agra(spec, moments(0.1, 0.2))[0] == 0.0

    def test_degenerate_moments(self, spec):
        assert rate_agra(spec, moments(0.1, 0.0))[0] == 0.0

    def test_constant_violation(self, spec):
        assert rate_agra(spec, moments(1.0, 0.0))[0] == pytest.approx(0.9 / 0.81)

    def test_cap(self):
        spec = RiskSpec(0.5, 0.1)
        assert rate_agra(spec, moments(1.0, 0.0))[0] == pytest.approx(1.0)

    def test_negative_gap_gives_zero(self, spec):
        assert rate_agra(spec, moments(0.02, 0.01))[0] == 0.0

    def test_reverse(self, spec):
        assert rate_agra(spec, moments(0.0, 0.0), reverse=True)[0] == pytest.approx(0.5 / 0.9)
        assert rate_agra(spec, moments(0.3, 0.1), reverse=True)[0] == 0.0

    def test_seeded_moments_give_zero_rate(self, spec):
        assert rate_agra(spec, RunningMoments.initial(3, spec.epsilon)).tolist() == [0, 0, 0]


class TestEmpiricalBernstein:

    def test_capped_early(self, spec):
        raw = sqrt(2*log(20) / (0.25*1*log(2)))
        assert raw == pytest.approx(5.879, abs=1e-3)
        assert rate_eb(spec, moments(0.5, 0.25), t=1)[0] == 0.5

    def test_uncapped_late(self, spec):
        rate = rate_eb(spec, moments(0.5, 0.25), t=10**6)[0]
        expected = sqrt(2*log(20) / (0.25*10**6*log(1+10**6)))
        assert rate == pytest.approx(expected, rel=1e-12)
        assert rate < 0.01

    def test_variance_floor(self, spec):
        assert rate_eb(spec, moments(0.1, 0.0), t=5)[0] == 0.5

    def test_custom_cap(self, spec):
        assert rate_eb(spec, moments(0.1, 0.25), t=1, cap=0.3)[0] == 0.3

    def test_invalid(self, spec):
        with pytest.raises(DomainError):
            rate_eb(spec, moments(0.1, 0.1), t=0)
        with pytest.raises(DomainError):
            rate_eb(spec, moments(0.1, 0.1), t=1, cap=1.0)


class TestFixed:

    def test_accepted(self, spec):
        assert rate_fixed(spec, 0) == 0
        assert rate_fixed(spec, 0.5) == 0.5
        assert rate_fixed(spec, 9.99) == 9.99

    @pytest.mark.parametrize("lam", [10, 12, -0.1])
    def test_rejected(self, spec, lam):
        with pytest.raises(DomainError):
            rate_fixed(spec, lam)

    def test_reverse_domain(self, spec):
        assert rate_fixed(spec, 1.1, reverse=True) == 1.1
        with pytest.raises(DomainError):
            rate_fixed(spec, 1/0.9, reverse=True)


class TestStrategy:

    def test_unknown_kind(self):
        with pytest.raises(DomainError):
            BettingStrategy("kelly")

    def test_fixed_broadcasts(self, spec):
        rate = BettingStrategy.fixed(0.5).rate(spec, RunningMoments.initial(4, 0.1), t=1)
        assert rate.tolist() == [0.5] * 4

    def test_range_over_random_histories(self, spec):
        rng = np.random.default_rng(0)
        m = RunningMoments(50, rng.random(100000), rng.random(100000) * 0.25, 0.1)
        agra = rate_agra(spec, m)
        eb = rate_eb(spec, m, t=int(rng.integers(1, 1000)))
        assert np.all((agra >= 0) & (agra <= 0.5/spec.epsilon))
        assert np.all((eb >= 0) & (eb <= 0.5))

    def test_max_rate(self, spec):
        assert BettingStrategy("agra").max_rate(spec) == pytest.approx(5.0)
        assert BettingStrategy("agra").max_rate(spec, reverse=True) == pytest.approx(0.5/0.9)
        assert BettingStrategy("eb_plugin", eb_cap=0.3).max_rate(spec) == 0.3
        assert BettingStrategy.fixed(0.7).max_rate(spec, reverse=True) == 0.7

    def test_agra_cap_is_reached(self, spec):
        rate = rate_agra(spec, moments(0.2, 0.0))
        assert rate[0] == BettingStrategy("agra").max_rate(spec)

    @pytest.mark.parametrize("kind", ["agra", "eb_plugin"])
    def test_rate_depends_on_history_only(self, spec, kind):
        tracker = Tracker("wealth_mult" if kind == "agra" else "wealth_eb", spec,
                          strategy=BettingStrategy(kind))
        state = tracker.initial(1)
        for z in (0.3, 0.0, 1.0, 0.2):
            state = tracker.step(state, [z])
        before = tracker.rate(state)
        np.testing.assert_array_equal(before, BettingStrategy(kind).rate(spec, state.moments, 5))
        # Whatever arrives at step 5, the rate it was bet with is the same
        for z in (0.0, 1.0):
            assert tracker.rate(state) == pytest.approx(before)
            tracker.step(state, [z])

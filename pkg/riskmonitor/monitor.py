"""Runs banks of trackers over loss streams and turns their stop times into
confidence sets, stopping records, false-alarm rates and delay summaries."""

import logging
from dataclasses import dataclass
from math import ceil
from typing import Optional

import numpy as np

from .betting import BettingStrategy
from .core import DomainError, ThresholdGrid, WindowConfig
from .trackers import NO_STOP, Tracker
from .streams import RiskProfileStream


logger = logging.getLogger(__name__)


GROUND_TRUTH_MODES = ("auto", "exact", "oracle", "none")


class StreamTruncatedError(DomainError):
    """The stream ended before the requested horizon."""

    def __init__(self, consumed, horizon):
        super().__init__(f"Stream ended after {consumed} steps, horizon is {horizon}")
        self.consumed = consumed
        self.horizon = horizon


@dataclass(frozen=True, eq=False)
class ConfidenceSet:
    """Thresholds still in the ψ-confidence set at step ``t``.

    In forward mode a threshold stays a member until its tracker stops. In
    reverse i.i.d. mode a threshold becomes a member once its reversed
    wealth reaches 1/δ and then stays for good.
    """

    t: int
    members: tuple
    mask: np.ndarray

    @property
    def size(self):
        return len(self.members)

    def __len__(self):
        return len(self.members)

    def __contains__(self, psi):
        return psi in self.members

    def least_conservative(self):
        """Smallest member, the usual pick in reverse i.i.d. mode when the
        risk decreases in ψ. None for an empty set."""
        return min(self.members) if self.members else None


@dataclass(frozen=True)
class StoppingRecord:
    """Outcome of one threshold over one run.

    ``tau_star`` is the first step the true risk exceeds ε (None when it
    never does or no ground truth is available). ``tau`` is the step the
    tracker signalled (None when censored at the horizon).
    """

    psi: float
    tau_star: Optional[int]
    tau: Optional[int]
    censored: bool
    false_alarm: bool
    trial: int = 0

    @property
    def delay(self):
        if self.tau is None or self.tau_star is None:
            return None
        return self.tau - self.tau_star


@dataclass(frozen=True, eq=False)
class ColumnRun:
    """Raw output of run_columns, one column per tracker.

    Attributes
    ----------
    stopped : np.ndarray of bool, shape (T, width)
        Stop (reverse mode: inclusion) flags after every step.
    stop_time : np.ndarray of int
        First stop step per column, 0 when it never stopped.
    tau_star : np.ndarray of int
        First step the ground truth exceeds ε, 0 when it never does.
    violating_at_stop : np.ndarray of bool
        Whether the ground truth exceeded ε at the stop step.
    statistics : np.ndarray or None, shape (T, width)
        Tracker statistic after every step, kept on request.
    has_truth : bool
        Whether any ground truth was available.
    """

    stopped: np.ndarray
    stop_time: np.ndarray
    tau_star: np.ndarray
    violating_at_stop: np.ndarray
    statistics: Optional[np.ndarray]
    has_truth: bool
    reverse: bool

    @property
    def horizon(self):
        return self.stopped.shape[0]

    @property
    def width(self):
        return self.stopped.shape[1]

    def members(self):
        """(T, width) membership mask of the confidence set."""
        return self.stopped if self.reverse else ~self.stopped


def _ground_truth(mode, step, oracle, oracle_state):
    """Per-column risk estimate used as ground truth at this step, and the
    updated oracle tracker state."""
    if mode in ("auto", "exact") and step.true_risk is not None:
        return step.true_risk, oracle_state
    if mode == "exact":
        raise DomainError(f"Exact ground truth requested but step {step.t} carries no true risk")
    if mode in ("auto", "oracle") and step.oracle is not None:
        oracle_state = oracle.step(oracle_state, step.oracle)
        return oracle_state.statistic, oracle_state
    if mode == "oracle":
        raise DomainError(f"Oracle ground truth requested but step {step.t} carries no oracle batch")
    return None, oracle_state


def run_columns(tracker, stream, horizon, width, ground_truth="auto", keep_statistics=True):
    """Steps ``tracker`` through the first ``horizon`` steps of ``stream``.

    Parameters
    ----------
    tracker : Tracker
    stream : iterable of StreamStep
    horizon : int
    width : int
        Expected number of loss columns per step.
    ground_truth : str
        One of GROUND_TRUTH_MODES. ``auto`` prefers the exact risk and falls
        back to the oracle batch.
    keep_statistics : bool
        Store the per-step tracker statistic.

    Returns
    -------
    run : ColumnRun

    Raises
    ------
    StreamTruncatedError
        If the stream yields fewer than ``horizon`` steps.
    """
    if ground_truth not in GROUND_TRUTH_MODES:
        raise DomainError(f"Unknown ground truth mode: {ground_truth}. "
                          f"Available: {', '.join(GROUND_TRUTH_MODES)}")
    if horizon < 1:
        raise DomainError(f"Horizon must be at least 1, got {horizon}")
    spec = tracker.spec
    oracle = Tracker("oracle_risk", spec)
    oracle_state = oracle.initial(width)
    state = tracker.initial(width)
    stopped = np.zeros((horizon, width), dtype=bool)
    statistics = np.zeros((horizon, width)) if keep_statistics else None
    tau_star = np.full(width, NO_STOP, dtype=int)
    violating_at_stop = np.zeros(width, dtype=bool)
    has_truth = False
    consumed = 0
    for step in stream:
        if consumed == horizon:
            break
        t = consumed + 1
        if step.t != t:
            raise DomainError(f"Expected time index {t}, got {step.t}")
        if len(step.record) != width:
            raise DomainError(f"Step {t} has {len(step.record)} loss columns, expected {width}")
        risk, oracle_state = _ground_truth(ground_truth, step, oracle, oracle_state)
        if tracker.kind == "oracle_risk":
            if step.oracle is None:
                raise DomainError(f"Step {t} carries no oracle batch")
            new_state = tracker.step(state, step.oracle)
        else:
            new_state = tracker.step(state, step.record)
        if risk is not None:
            has_truth = True
            violating = risk > spec.epsilon
            tau_star = np.where((tau_star == NO_STOP) & violating, t, tau_star)
            violating_at_stop |= new_state.stopped & ~state.stopped & violating
        state = new_state
        stopped[consumed] = state.stopped
        if keep_statistics:
            statistics[consumed] = state.statistic
        consumed = t
    if consumed < horizon:
        raise StreamTruncatedError(consumed, horizon)
    logger.debug("%s: %d of %d columns stopped after %d steps", tracker.kind,
                 int(state.stopped.sum()), width, horizon)
    return ColumnRun(stopped, state.stop_time.copy(), tau_star, violating_at_stop,
                     statistics, has_truth, tracker.reverse)


def stopping_records(psi_values, run, columns=None, trial=0):
    """StoppingRecords for the given ``columns`` of ``run`` (all by default),
    labelled with ``psi_values`` in order."""
    if columns is None:
        columns = range(run.width)
    columns = list(columns)
    if len(columns) != len(psi_values):
        raise DomainError(f"{len(psi_values)} thresholds for {len(columns)} columns")
    records = []
    for psi, c in zip(psi_values, columns):
        tau = int(run.stop_time[c]) or None
        tau_star = int(run.tau_star[c]) or None
        if run.reverse:
            false_alarm = tau is not None and bool(run.violating_at_stop[c])
        else:
            false_alarm = tau is not None and run.has_truth and (tau_star is None or tau < tau_star)
        records.append(StoppingRecord(float(psi), tau_star, tau, tau is None, false_alarm, trial))
    return records


@dataclass(frozen=True, eq=False)
class MonitorResult:
    """Per-step confidence-set trace and per-threshold records of one run."""

    tracker: str
    grid: ThresholdGrid
    run: ColumnRun
    records: list

    @property
    def horizon(self):
        return self.run.horizon

    @property
    def statistics(self):
        return self.run.statistics

    @property
    def stopped(self):
        return self.run.stopped

    def confidence_set_at(self, t):
        """Confidence set after step ``t``. Before any data (t = 0) nothing
        has been rejected in forward mode and nothing admitted in reverse
        mode."""
        if not 0 <= t <= self.horizon:
            raise DomainError(f"Step {t} outside 0..{self.horizon}")
        if t == 0:
            mask = np.full(len(self.grid), not self.run.reverse)
        else:
            mask = self.run.members()[t-1]
        members = tuple(psi for psi, m in zip(self.grid, mask) if m)
        return ConfidenceSet(t, members, mask.copy())

    @property
    def confidence_sets(self):
        return [self.confidence_set_at(t) for t in range(1, self.horizon+1)]

    def cs_sizes(self):
        """Confidence-set size after every step, t = 1..T."""
        return self.run.members().sum(axis=1)


def run_monitor(grid, spec, window, tracker_kind, strategy, stream, T,
                ground_truth="auto", track_only=False):
    """Runs one tracker per threshold of ``grid`` over ``stream``.

    Parameters
    ----------
    grid : ThresholdGrid
    spec : RiskSpec
    window : WindowConfig
    tracker_kind : str
    strategy : BettingStrategy or None
        Ignored by the running and oracle trackers.
    stream : iterable of StreamStep
        Must carry one loss per grid point at every step.
    T : int
        Horizon.
    ground_truth : str
        Source of τ*, see run_columns.
    track_only : bool
        Accumulate the summation process without stopping.

    Returns
    -------
    result : MonitorResult
    """
    if tracker_kind in ("running_risk", "oracle_risk"):
        strategy = None
    tracker = Tracker(tracker_kind, spec, window, strategy, track_only)
    run = run_columns(tracker, stream, T, len(grid), ground_truth)
    records = stopping_records(grid.values, run)
    logger.info("%s over %d thresholds: %d signals, %d false alarms", tracker_kind, len(grid),
                sum(not r.censored for r in records), sum(r.false_alarm for r in records))
    return MonitorResult(tracker_kind, grid, run, records)


@dataclass(frozen=True, eq=False)
class FalseAlarmSummary:
    """Per-threshold false-alarm rate over R trials.

    ``frac_positive`` and ``frac_above_delta`` are the fractions of
    thresholds whose rate is above 0 and above δ respectively.
    """

    psi: np.ndarray
    rate: np.ndarray
    counts: np.ndarray
    trials: int
    delta: float

    @property
    def frac_positive(self):
        return float(np.mean(self.rate > 0))

    @property
    def frac_above_delta(self):
        return float(np.mean(self.rate > self.delta))


def false_alarm_rate(trials, delta):
    """Fraction of trials with a false alarm, per threshold.

    Parameters
    ----------
    trials : sequence of sequences of StoppingRecord
        One sequence per trial, each over the same thresholds in the same
        order.
    delta : float
        Budget the rates are compared against in the summary fractions.

    Raises
    ------
    DomainError
        If there are no trials or the trials disagree on the thresholds.
    """
    trials = [list(records) for records in trials]
    if not trials:
        raise DomainError("No trials")
    psi = [r.psi for r in trials[0]]
    if not psi:
        raise DomainError("Trials without thresholds")
    counts = np.zeros(len(psi), dtype=int)
    for k, records in enumerate(trials):
        if [r.psi for r in records] != psi:
            raise DomainError(f"Trial {k} is not aligned with the threshold grid of trial 0")
        counts += [r.false_alarm for r in records]
    return FalseAlarmSummary(np.array(psi), counts / len(trials), counts, len(trials), delta)


@dataclass(frozen=True)
class DelaySummary:
    """Mean and population standard deviation of the non-negative delays.

    Censored records and false alarms are counted but kept out of the mean.
    ``mean`` and ``std`` are None when no delay is available.
    """

    mean: Optional[float]
    std: Optional[float]
    count: int
    censored: int
    false_alarms: int
    total: int


def delay_summary(records):
    records = list(records)
    delays = [r.delay for r in records if r.delay is not None and r.delay >= 0]
    censored = sum(r.censored for r in records)
    false_alarms = sum(r.false_alarm for r in records)
    if not delays:
        return DelaySummary(None, None, 0, censored, false_alarms, len(records))
    delays = np.array(delays, dtype=float)
    return DelaySummary(float(delays.mean()), float(delays.std()), len(delays),
                        censored, false_alarms, len(records))


def paired_delays(records_a, records_b):
    """Delays of two record collections on the (trial, ψ) pairs both
    detected with a non-negative delay. Comparisons between settings are
    made on this common set."""
    def index(records):
        return {(r.trial, r.psi): r.delay for r in records if r.delay is not None and r.delay >= 0}
    a, b = index(records_a), index(records_b)
    common = sorted(a.keys() & b.keys())
    return np.array([a[k] for k in common], dtype=float), np.array([b[k] for k in common], dtype=float)


def shift_delays(records, horizon):
    """Delays of the thresholds a shift pushes into violation, keyed by
    (trial, ψ).

    Only thresholds that are risk-controlled at t=1 and become violated by
    ``horizon`` count, so every tracker is measured on the same population.
    A threshold still unflagged at the horizon counts horizon + 1 - τ*, a
    lower bound on its delay. False alarms are left out.
    """
    delays = {}
    for r in records:
        if r.tau_star is None or not 1 < r.tau_star <= horizon or r.false_alarm:
            continue
        delays[(r.trial, r.psi)] = r.delay if r.tau is not None else horizon + 1 - r.tau_star
    return delays


def common_shift_delays(horizon, *record_sets):
    """shift_delays of each record set restricted to the (trial, ψ) keys all
    of them share, as one array per set in matching order."""
    indexed = [shift_delays(records, horizon) for records in record_sets]
    common = sorted(set.intersection(*(set(d) for d in indexed)))
    return [np.array([d[k] for k in common], dtype=float) for d in indexed]


def predicted_delay(spec, lam, mu, t_shift, constant=1.0):
    """Worst-case delay scale C (log(1/δ) + T_shift λ ε) / (λ μ)."""
    if mu <= 0:
        raise DomainError(f"Violation intensity must be positive, got {mu}")
    if lam <= 0:
        raise DomainError(f"Betting rate must be positive, got {lam}")
    return constant * (spec.log_rejection_threshold + t_shift*lam*spec.epsilon) / (lam*mu)


@dataclass(frozen=True)
class DelayBoundReport:
    lam: float
    mu: float
    t_shift: int
    constant: float
    predicted: float
    observed: DelaySummary

    @property
    def satisfied(self):
        return self.observed.mean is not None and self.observed.mean <= self.predicted

    @property
    def ratio(self):
        """Observed mean delay over the unscaled bound."""
        if self.observed.mean is None:
            return None
        return self.observed.mean * self.constant / self.predicted


def delay_bound_check(spec, lam, mu, t_shift, trials=500, pre_mean=None, constant=2.0,
                      seed=0, horizon=None):
    """Monte-Carlo check of the worst-case delay of a fixed-rate wealth
    process on a changepoint stream.

    Losses are Bernoulli with mean ``pre_mean`` (ε by default) up to
    ``t_shift`` and ε + μ afterwards. Every trial runs in its own column
    with no burn-in, so τ* = t_shift + 1.

    Returns
    -------
    report : DelayBoundReport
    """
    predicted = predicted_delay(spec, lam, mu, t_shift, constant)
    if horizon is None:
        horizon = t_shift + ceil(4*predicted) + 100
    stream = RiskProfileStream.changepoint(spec.epsilon, mu, t_shift, trials, horizon,
                                           pre_mean=pre_mean, seed=seed)
    tracker = Tracker("wealth_mult", spec, WindowConfig(burn_in=0), BettingStrategy.fixed(lam))
    run = run_columns(tracker, stream, horizon, trials, keep_statistics=False)
    records = [record for k in range(trials)
               for record in stopping_records([0.0], run, [k], trial=k)]
    summary = delay_summary(records)
    logger.info("Delay check λ=%g μ=%g T_shift=%d: observed %s, bound %.1f",
                lam, mu, t_shift, summary.mean, predicted)
    return DelayBoundReport(lam, mu, t_shift, constant, predicted, summary)


def delay_ratio(spec, lam, mu, t_shift, trials=500, pre_mean=None, seed=0):
    """Mean delay at intensity μ divided by the mean delay at 2μ. The delay
    scales roughly like 1/μ, so this is close to 2."""
    slow = delay_bound_check(spec, lam, mu, t_shift, trials, pre_mean, seed=seed)
    fast = delay_bound_check(spec, lam, 2*mu, t_shift, trials, pre_mean, seed=seed+1)
    if slow.observed.mean is None or not fast.observed.mean:
        raise DomainError("Not enough detections to compare delays")
    return slow.observed.mean / fast.observed.mean


@dataclass(frozen=True, eq=False)
class GrowthComparison:
    """Mean log-wealth per step of the adaptive rate and of fixed rates,
    with the standard error of each mean."""

    fixed_rates: np.ndarray
    fixed_growth: np.ndarray
    fixed_stderr: np.ndarray
    adaptive_growth: float
    adaptive_stderr: float

    @property
    def best_fixed_rate(self):
        return float(self.fixed_rates[np.argmax(self.fixed_growth)])

    def dominated_rates(self, slack=0.0):
        """Fixed rates whose growth the adaptive rate matches or beats."""
        return self.fixed_rates[self.adaptive_growth + slack >= self.fixed_growth]


def growth_rate_comparison(spec, p, rates=None, trials=2000, horizon=500, seed=0):
    """Compares the growth of wealth_mult under the adaptive rate against
    fixed rates on i.i.d. Bernoulli(p) losses.

    Every rate sees the same loss paths. ``rates`` defaults to 50 evenly
    spaced values in [0, 1/ε).
    """
    if rates is None:
        rates = np.linspace(0, 1/spec.epsilon, 51)[:-1]
    rates = np.asarray(rates, dtype=float)
    if np.any((rates < 0) | (rates >= 1/spec.epsilon)):
        raise DomainError(f"Fixed rates must lie in [0, {1/spec.epsilon})")
    rng = np.random.default_rng(seed)
    z = rng.binomial(1, p, size=(horizon, trials)).astype(float)
    fixed = np.array([np.log1p(lam*(z - spec.epsilon)).sum(axis=0) / horizon for lam in rates])
    tracker = Tracker("wealth_mult", spec, WindowConfig(burn_in=0), BettingStrategy("agra"))
    state = tracker.initial(trials)
    for t in range(horizon):
        state = tracker.step(state, z[t])
    adaptive = state.log_wealth / horizon
    return GrowthComparison(rates, fixed.mean(axis=1), fixed.std(axis=1) / np.sqrt(trials),
                            float(adaptive.mean()), float(adaptive.std() / np.sqrt(trials)))

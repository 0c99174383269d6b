"""Evidence accumulation processes.

A TrackerState holds one independent tracker per column. Columns are usually
threshold candidates ψ, but nothing ties them together, so Monte-Carlo code
also uses them for independent trials.
"""

from dataclasses import dataclass, replace
from math import log, sqrt
from typing import Optional

import numpy as np

from .core import DomainError, LossRecord, RunningMoments, WindowConfig, check_losses


TRACKER_KINDS = ("wealth_mult", "wealth_sum", "wealth_eb", "running_risk",
                 "oracle_risk", "wealth_reverse_iid")

WEALTH_KINDS = ("wealth_mult", "wealth_sum", "wealth_eb")

# Absolute slack on log-space comparisons against log(1/δ), so that a wealth
# of exactly 1/δ is counted as a rejection despite rounding in exp/log.
LOG_TOLERANCE = 1e-12

NO_STOP = 0


@dataclass(frozen=True, eq=False)
class TrackerState:
    """State of a bank of trackers of the same kind.

    Attributes
    ----------
    kind : str
        One of TRACKER_KINDS.
    log_wealth : np.ndarray
        log M_t for the multiplicative kinds, the raw sum for ``wealth_sum``
        and the risk estimate for ``running_risk`` and ``oracle_risk``.
    t : int
        Number of steps consumed.
    moments : RunningMoments
        Moments of the (batch-mean) losses seen so far.
    stopped : np.ndarray of bool
        Absorbing stop (or, in reverse mode, inclusion) flag.
    stop_time : np.ndarray of int
        Step at which ``stopped`` was first set, NO_STOP (0) otherwise.
    window : WindowConfig
    track_only : bool
        Accumulate without ever stopping (rolling-risk-control view of the
        summation process).
    """

    kind: str
    log_wealth: np.ndarray
    t: int
    moments: RunningMoments
    stopped: np.ndarray
    stop_time: np.ndarray
    window: WindowConfig
    track_only: bool = False
    increments: Optional[np.ndarray] = None

    @classmethod
    def initial(cls, kind, width, spec, window=None, track_only=False):
        if kind not in TRACKER_KINDS:
            raise DomainError(f"Unknown tracker kind: {kind}. "
                              f"Available: {', '.join(TRACKER_KINDS)}")
        window = window or WindowConfig()
        moments = RunningMoments.initial(width, spec.epsilon, window.window)
        increments = None
        if window.strict and kind in ("wealth_mult", "wealth_sum", "wealth_eb"):
            increments = np.zeros((window.window, width))
        return cls(kind, np.zeros(width), 0, moments, np.zeros(width, dtype=bool),
                   np.full(width, NO_STOP, dtype=int), window, track_only, increments)

    @property
    def width(self):
        return self.log_wealth.shape[0]

    @property
    def statistic(self):
        return self.log_wealth

    @property
    def wealth(self):
        return np.exp(self.log_wealth)


def _batch_mean(payoff_inputs, width):
    """Per-column batch mean of the losses received at one step.

    Accepts a LossRecord (already averaged), a 1D vector (B=1) or a (B, n)
    matrix of raw losses.
    """
    if isinstance(payoff_inputs, LossRecord):
        zbar = payoff_inputs.values
    else:
        z = check_losses(payoff_inputs)
        if z.ndim == 2:
            if z.shape[0] == 0:
                raise DomainError("Empty batch")
            zbar = z.mean(axis=0)
        elif z.ndim <= 1:
            zbar = np.atleast_1d(z)
        else:
            raise DomainError(f"Losses must be 1D or 2D, got shape {z.shape}")
    if zbar.shape[0] == 1 and width > 1:
        zbar = np.full(width, zbar[0])
    if zbar.shape[0] != width:
        raise DomainError(f"Expected {width} loss columns, got {zbar.shape[0]}")
    return zbar


def rate_limit(kind, spec):
    """Exclusive upper end of the betting rates a wealth process of ``kind``
    accepts: 1/ε keeps 1 + λ(z - ε) positive, 1 keeps ρ(λ) finite and
    1/(1-ε) covers the reversed payoff ε - z."""
    if kind == "wealth_eb":
        return 1.0
    if kind == "wealth_reverse_iid":
        return 1/(1-spec.epsilon)
    return 1/spec.epsilon


def _rate_array(lambda_t, width, limit):
    lam = np.broadcast_to(np.asarray(lambda_t, dtype=float), (width,))
    bad = (lam < 0) | (lam >= limit)
    if np.any(bad):
        raise DomainError(f"Betting rate {lam[bad][0]} outside [0, {limit})")
    return lam


def _check_kind(state, *kinds):
    if state.kind not in kinds:
        raise DomainError(f"Cannot apply a {'/'.join(kinds)} update to a {state.kind} tracker")


def _accumulate(state, increment):
    """Adds the log-increment, honouring strict windows."""
    if state.increments is None:
        return state.log_wealth + increment, None
    increments = state.increments.copy()
    increments[state.t % state.window.window] = increment
    return increments.sum(axis=0), increments


def _settle(state, log_wealth, moments, crossed, increments=None, burn_in=True):
    t = state.t + 1
    if not np.all(np.isfinite(log_wealth)):
        raise FloatingPointError(f"Non-finite {state.kind} statistic at step {t}")
    can_stop = not state.track_only and (not burn_in or t > state.window.burn_in_steps)
    new_stops = crossed & ~state.stopped if can_stop else np.zeros_like(state.stopped)
    stopped = state.stopped | new_stops
    stop_time = np.where(new_stops, t, state.stop_time)
    return replace(state, log_wealth=log_wealth, t=t, moments=moments,
                   stopped=stopped, stop_time=stop_time, increments=increments)


def step_mult(state, spec, lambda_t, payoff_inputs):
    """Multiplicative wealth update.

    Multiplies M_{t-1} by (1/B) Σ_b (1 + λ_t (z_{t,b} - ε)) which, being
    affine in the losses, equals 1 + λ_t (z̄_t - ε). The factor is at least
    1 - λ_t ε > 0 and is logged before accumulation.
    """
    _check_kind(state, "wealth_mult")
    zbar = _batch_mean(payoff_inputs, state.width)
    lam = _rate_array(lambda_t, state.width, rate_limit("wealth_mult", spec))
    increment = np.log1p(lam * (zbar - spec.epsilon))
    log_wealth, increments = _accumulate(state, increment)
    crossed = log_wealth >= spec.log_rejection_threshold - LOG_TOLERANCE
    return _settle(state, log_wealth, state.moments.update(zbar), crossed, increments)


def azuma_boundary(t, delta):
    """High-probability growth limit sqrt(2 t log(1/δ)) of the summation
    process."""
    return sqrt(2*t*log(1/delta))


def step_sum(state, spec, lambda_t, payoff_inputs):
    """Summation process update, adding λ_t (z̄_t - ε).

    Stops once the sum reaches sqrt(2 t log(1/δ)). In ``track_only`` mode the
    sum keeps accumulating without a stopping rule.
    """
    _check_kind(state, "wealth_sum")
    zbar = _batch_mean(payoff_inputs, state.width)
    lam = _rate_array(lambda_t, state.width, rate_limit("wealth_sum", spec))
    log_wealth, increments = _accumulate(state, lam * (zbar - spec.epsilon))
    crossed = log_wealth >= azuma_boundary(state.t + 1, spec.delta)
    return _settle(state, log_wealth, state.moments.update(zbar), crossed, increments)


def rho(lam):
    """(-log(1-λ) - λ)/4, the empirical-Bernstein penalty."""
    lam = np.asarray(lam, dtype=float)
    return (-np.log1p(-lam) - lam) / 4


def step_eb(state, spec, lambda_t, payoff_inputs):
    """Empirical-Bernstein wealth update.

    Adds λ_t (z̄_t - ε) - v_t ρ(λ_t) to the log-wealth, with
    v_t = 4 (z̄_t - μ̂_{t-1})² taken from the moments before this step.
    """
    _check_kind(state, "wealth_eb")
    zbar = _batch_mean(payoff_inputs, state.width)
    lam = _rate_array(lambda_t, state.width, rate_limit("wealth_eb", spec))
    v = 4 * (zbar - state.moments.mean)**2
    increment = lam * (zbar - spec.epsilon) - v * rho(lam)
    log_wealth, increments = _accumulate(state, increment)
    crossed = log_wealth >= spec.log_rejection_threshold - LOG_TOLERANCE
    return _settle(state, log_wealth, state.moments.update(zbar), crossed, increments)


def step_running(state, spec, payoff_inputs):
    """Running (windowed) mean of the losses. Flags once it exceeds ε after
    burn-in. There is no false-alarm control behind this flag."""
    _check_kind(state, "running_risk")
    zbar = _batch_mean(payoff_inputs, state.width)
    moments = state.moments.update(zbar)
    return _settle(state, moments.mean.copy(), moments, moments.mean > spec.epsilon)


def step_oracle(state, spec, oracle_batch):
    """Empirical estimate of the true risk from a fresh batch of B* draws.
    The first flag defines the ground-truth violation time τ*."""
    _check_kind(state, "oracle_risk")
    if isinstance(oracle_batch, LossRecord):
        risk = oracle_batch.values
    else:
        batch = check_losses(oracle_batch)
        if batch.size == 0:
            raise DomainError("Empty oracle batch")
        risk = batch.mean(axis=0) if batch.ndim == 2 else batch
    risk = _batch_mean(np.atleast_1d(risk), state.width)
    return _settle(state, risk.copy(), state.moments, risk > spec.epsilon, burn_in=False)


def step_reverse_iid(state, spec, lambda_t, payoff_inputs):
    """Reversed wealth process ∏ (1 + λ_i (ε - z_i)) for i.i.d. streams.

    Reaching 1/δ is evidence of risk control: ``stopped`` then marks a
    permanent member of the i.i.d. confidence set.
    """
    _check_kind(state, "wealth_reverse_iid")
    zbar = _batch_mean(payoff_inputs, state.width)
    lam = _rate_array(lambda_t, state.width, rate_limit("wealth_reverse_iid", spec))
    log_wealth = state.log_wealth + np.log1p(lam * (spec.epsilon - zbar))
    crossed = log_wealth >= spec.log_rejection_threshold - LOG_TOLERANCE
    return _settle(state, log_wealth, state.moments.update(zbar), crossed)


class Tracker:
    """Binds a tracker kind to its risk parameters, window settings and
    betting strategy, and forms the predictable rate before every step.
    """

    def __init__(self, kind, spec, window=None, strategy=None, track_only=False):
        if kind not in TRACKER_KINDS:
            raise DomainError(f"Unknown tracker kind: {kind}. "
                              f"Available: {', '.join(TRACKER_KINDS)}")
        if track_only and kind != "wealth_sum":
            raise DomainError("Only the summation process supports track-only mode")
        self.kind = kind
        self.spec = spec
        self.window = window or WindowConfig()
        self.strategy = strategy
        self.track_only = track_only
        if self.needs_rate and strategy is None:
            raise DomainError(f"Tracker {kind} needs a betting strategy")

    @property
    def needs_rate(self):
        return self.kind not in ("running_risk", "oracle_risk")

    @property
    def reverse(self):
        return self.kind == "wealth_reverse_iid"

    def initial(self, width):
        return TrackerState.initial(self.kind, width, self.spec, self.window, self.track_only)

    def rate(self, state):
        return self.strategy.rate(self.spec, state.moments, state.t + 1, self.reverse)

    def step(self, state, payoff_inputs):
        if self.kind == "running_risk":
            return step_running(state, self.spec, payoff_inputs)
        if self.kind == "oracle_risk":
            return step_oracle(state, self.spec, payoff_inputs)
        lam = self.rate(state)
        return STEP_FUNCTIONS[self.kind](state, self.spec, lam, payoff_inputs)


STEP_FUNCTIONS = {
    "wealth_mult": step_mult,
    "wealth_sum": step_sum,
    "wealth_eb": step_eb,
    "wealth_reverse_iid": step_reverse_iid,
}

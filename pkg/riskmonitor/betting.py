"""Predictable betting rates.

Every rate for step t is a function of the risk parameters, the moments of
z_1..z_{t-1} and t itself. Trackers ask for the rate before the step-t loss
is consumed, so a strategy never sees the loss it bets on.
"""

from dataclasses import dataclass
from math import log

import numpy as np

from .core import DomainError


STRATEGY_KINDS = ("fixed", "agra", "eb_plugin")

# Floor for the variance estimate inside the empirical-Bernstein rate.
EB_VARIANCE_FLOOR = 1e-6


def _agra(gap, var, cap):
    denom = var + gap*gap
    rate = np.divide(gap, denom, out=np.zeros_like(denom), where=denom > 0)
    return np.clip(rate, 0.0, cap)


def rate_agra(spec, moments, reverse=False):
    """Approximately growth-rate-optimal betting rate.

    Computes max{0, min{(μ̂-ε)/(σ̂²+(μ̂-ε)²), (1/2)/ε}} per column. With
    ``reverse`` the payoff is ε - z (reverse i.i.d. process), the gap becomes
    ε-μ̂ and the cap (1/2)/(1-ε).

    Parameters
    ----------
    spec : RiskSpec
    moments : RunningMoments
        Moments of the losses observed strictly before the current step.
    reverse : bool

    Returns
    -------
    rate : np.ndarray
        One rate per column. When σ̂² = 0 and μ̂ = ε the rate is 0.
    """
    eps = spec.epsilon
    if reverse:
        return _agra(eps - moments.mean, moments.var, 0.5/(1-eps))
    return _agra(moments.mean - eps, moments.var, 0.5/eps)


def rate_eb(spec, moments, t, cap=0.5):
    """Predictable plug-in rate of the empirical-Bernstein wealth process,
    min{sqrt(2 log(2/δ) / (σ̂² t log(1+t))), c}.

    The variance estimate is floored at EB_VARIANCE_FLOOR so constant early
    losses give a capped rate instead of a division by zero.
    """
    if t < 1:
        raise DomainError(f"Time index must be at least 1, got {t}")
    if not 0 < cap < 1:
        raise DomainError(f"EB cap must lie in (0, 1), got {cap}")
    var = np.maximum(moments.var, EB_VARIANCE_FLOOR)
    rate = np.sqrt(2*log(2/spec.delta) / (var * t * log(1+t)))
    return np.minimum(rate, cap)


def rate_fixed(spec, lam, reverse=False):
    """Constant betting rate. Must lie in [0, 1/ε) (or [0, 1/(1-ε)) for the
    reversed payoff)."""
    limit = 1/(1-spec.epsilon) if reverse else 1/spec.epsilon
    if not 0 <= lam < limit:
        raise DomainError(f"Fixed betting rate {lam} outside [0, {limit})")
    return float(lam)


@dataclass(frozen=True)
class BettingStrategy:
    """A betting-rate rule plus its constants.

    Parameters
    ----------
    kind : str
        One of STRATEGY_KINDS.
    fixed_rate : float
        λ used by the ``fixed`` kind.
    eb_cap : float
        Cap c of the empirical-Bernstein plug-in rate, in (0,1).
    """

    kind: str = "agra"
    fixed_rate: float = 0.0
    eb_cap: float = 0.5

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise DomainError(f"Unknown betting strategy: {self.kind}. "
                              f"Available: {', '.join(STRATEGY_KINDS)}")
        if not 0 < self.eb_cap < 1:
            raise DomainError(f"EB cap must lie in (0, 1), got {self.eb_cap}")
        if self.fixed_rate < 0:
            raise DomainError(f"Fixed betting rate must be non-negative, got {self.fixed_rate}")

    @classmethod
    def fixed(cls, lam):
        return cls("fixed", fixed_rate=lam)

    def max_rate(self, spec, reverse=False):
        """Largest rate the strategy can emit for ``spec``."""
        if self.kind == "agra":
            return 0.5/(1-spec.epsilon) if reverse else 0.5/spec.epsilon
        if self.kind == "eb_plugin":
            return self.eb_cap
        return self.fixed_rate

    def rate(self, spec, moments, t, reverse=False):
        """Rate for step ``t``, one value per column of ``moments``."""
        if self.kind == "agra":
            return rate_agra(spec, moments, reverse)
        if self.kind == "eb_plugin":
            return rate_eb(spec, moments, t, self.eb_cap)
        lam = rate_fixed(spec, self.fixed_rate, reverse)
        return np.full(moments.width, lam)

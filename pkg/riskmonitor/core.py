from dataclasses import dataclass, field
from math import floor, log
from typing import Optional

import numpy as np


# Maximal variance of a [0,1]-bounded variable, used to seed the moments.
MAX_VARIANCE = 0.25


class DomainError(ValueError):
    """Raised whenever a value falls outside the domain an operation is
    defined on (losses outside [0,1], betting rates outside their legal
    interval, malformed grids, shape mismatches...).
    """


def check_losses(z):
    """Validates that every loss lies in [0,1].

    Parameters
    ----------
    z : array_like
        Loss values, any shape.

    Returns
    -------
    z : np.ndarray
        The same values as a float array.

    Raises
    ------
    DomainError
        If a value is non-finite or outside [0,1]. Out-of-range losses are
        never clamped.
    """
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise DomainError("Losses must be finite")
    if np.any(z < 0) or np.any(z > 1):
        bad = z[(z < 0) | (z > 1)].ravel()[0]
        raise DomainError(f"Loss {bad!r} outside [0, 1]")
    return z


@dataclass(frozen=True)
class RiskSpec:
    """Tolerated risk level and false-alarm budget of the sequential test.

    Parameters
    ----------
    epsilon : float
        Risk level ε in (0,1). A threshold is risk-controlling while its
        conditional expected loss stays at or below ε.
    delta : float
        False-alarm budget δ in (0,1). Wealth processes reject once they
        reach 1/δ.
    """

    epsilon: float
    delta: float
    rejection_threshold: float = field(init=False, repr=False)
    log_rejection_threshold: float = field(init=False, repr=False)

    def __post_init__(self):
        if not 0 < self.epsilon < 1:
            raise DomainError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise DomainError(f"delta must lie in (0, 1), got {self.delta}")
        object.__setattr__(self, "rejection_threshold", 1.0 / self.delta)
        object.__setattr__(self, "log_rejection_threshold", -log(self.delta))


@dataclass(frozen=True)
class ThresholdGrid:
    """Ordered candidate thresholds ψ.

    Parameters
    ----------
    values : tuple of float
        Strictly increasing thresholds inside [lo, hi].
    lo, hi : float
        Bounds of the admissible threshold range, a sub-interval of [0,1].
    """

    values: tuple
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", values)
        if not 0 <= self.lo <= self.hi <= 1:
            raise DomainError(f"Grid bounds [{self.lo}, {self.hi}] not inside [0, 1]")
        if not values:
            raise DomainError("Empty threshold grid")
        for v in values:
            if not self.lo <= v <= self.hi:
                raise DomainError(f"Threshold {v} outside [{self.lo}, {self.hi}]")
        for a, b in zip(values, values[1:]):
            if not a < b:
                raise DomainError("Threshold grid must be strictly increasing")

    @classmethod
    def linspace(cls, lo=0.0, hi=1.0, resolution=101):
        if resolution < 1:
            raise DomainError("Grid resolution must be at least 1")
        if resolution == 1:
            return cls((lo,), lo, hi)
        return cls(tuple(np.linspace(lo, hi, resolution)), lo, hi)

    @property
    def resolution(self):
        return len(self.values)

    @property
    def array(self):
        return np.array(self.values)

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def __getitem__(self, idx):
        return self.values[idx]


@dataclass(frozen=True, eq=False)
class LossRecord:
    """Losses observed at one time step, one column per threshold.

    ``values`` holds the per-threshold batch mean of the B losses received at
    step ``t``. Every evidence update used by the trackers is affine in the
    loss, so the batch mean carries all the information the batched wealth
    formulas need.
    """

    t: int
    values: np.ndarray
    batch_size: int = 1

    def __post_init__(self):
        if self.t < 1:
            raise DomainError(f"Time indices start at 1, got {self.t}")
        if self.batch_size < 1:
            raise DomainError(f"Batch size must be at least 1, got {self.batch_size}")
        values = np.atleast_1d(check_losses(self.values)).copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_batch(cls, t, losses):
        """Builds a record from a (B, n) matrix of raw losses (or a 1D
        vector for B=1)."""
        losses = check_losses(losses)
        if losses.ndim == 1:
            return cls(t, losses, 1)
        if losses.shape[0] == 0:
            raise DomainError("Empty batch")
        return cls(t, losses.mean(axis=0), losses.shape[0])

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class WindowConfig:
    """Sliding window, batching and burn-in settings of a tracker.

    Parameters
    ----------
    window : int or None
        Sliding window length S in time steps. None keeps the full history.
    batch : int
        Batch size B (number of losses per time step).
    burn_in : int or None
        Steps during which stopping is suppressed. Defaults to floor(100/B).
    strict : bool
        When True, wealth processes also forget evidence older than S steps
        (log-wealth is the sum of the last S increments). By default the window
        only applies to the betting-rate statistics.
    """

    window: Optional[int] = None
    batch: int = 1
    burn_in: Optional[int] = None
    strict: bool = False

    def __post_init__(self):
        if self.window is not None and self.window < 1:
            raise DomainError(f"Window length must be at least 1, got {self.window}")
        if self.batch < 1:
            raise DomainError(f"Batch size must be at least 1, got {self.batch}")
        if self.burn_in is not None and self.burn_in < 0:
            raise DomainError(f"Burn-in cannot be negative, got {self.burn_in}")
        if self.strict and self.window is None:
            raise DomainError("Strict windowing needs a window length")

    @property
    def burn_in_steps(self):
        if self.burn_in is None:
            return floor(100 / self.batch)
        return self.burn_in


@dataclass(frozen=True, eq=False)
class RunningMoments:
    """Running mean and population variance of the observed losses, one
    column per threshold.

    Without a window the moments are maintained with Welford's recurrence.
    With a window of length S the last S raw values sit in a ring buffer and
    the moments are recomputed from it at every update.

    Before the first observation the mean is seeded with ε and the variance
    with 0.25, the largest variance a [0,1] variable can have.
    """

    count: int
    mean: np.ndarray
    var: np.ndarray
    prior_mean: float
    window: Optional[int] = None
    _m2: Optional[np.ndarray] = None
    _buffer: Optional[np.ndarray] = None

    @classmethod
    def initial(cls, width, epsilon, window=None):
        mean = np.full(width, float(epsilon))
        var = np.full(width, MAX_VARIANCE)
        if window is None:
            return cls(0, mean, var, float(epsilon), None, np.zeros(width), None)
        if window < 1:
            raise DomainError(f"Window length must be at least 1, got {window}")
        buffer = np.zeros((window, width))
        return cls(0, mean, var, float(epsilon), window, None, buffer)

    @property
    def width(self):
        return self.mean.shape[0]

    @property
    def retained(self):
        """Number of values the current moments are computed from."""
        if self.window is None:
            return self.count
        return min(self.count, self.window)

    def update(self, z):
        z = np.broadcast_to(check_losses(z), self.mean.shape)
        count = self.count + 1
        if self.window is None:
            delta = z - self.mean
            mean = self.mean + delta / count
            m2 = self._m2 + delta * (z - mean)
            var = np.maximum(m2 / count, 0.0)
            return RunningMoments(count, mean, var, self.prior_mean, None, m2, None)
        buffer = self._buffer.copy()
        buffer[self.count % self.window] = z
        retained = buffer[:min(count, self.window)]
        mean = retained.mean(axis=0)
        var = retained.var(axis=0)
        return RunningMoments(count, mean, var, self.prior_mean, self.window, None, buffer)

    def reset(self):
        return RunningMoments.initial(self.width, self.prior_mean, self.window)

    def __eq__(self, other):
        if not isinstance(other, RunningMoments):
            return NotImplemented
        return (self.count == other.count
                and self.window == other.window
                and self.prior_mean == other.prior_mean
                and np.array_equal(self.mean, other.mean)
                and np.array_equal(self.var, other.var)
                and _same_optional(self._m2, other._m2)
                and _same_optional(self._buffer, other._buffer))

    __hash__ = None


def _same_optional(a, b):
    if a is None or b is None:
        return a is b
    return np.array_equal(a, b)


def update_moments(state, z):
    """Consumes one loss per column and returns the updated moments."""
    return state.update(z)

"""Loss stream production.

Synthetic streams sample bounded scores from an inlier/outlier mixture whose
outlier weight follows a ShiftSchedule, turn them into per-threshold task
losses and, since the pools are parametric, also report the exact risk of
every threshold at every step. File streams replay exported score files.
"""

import csv
import logging
from dataclasses import dataclass
from itertools import groupby
from typing import Optional

import numpy as np
from scipy import stats

from .core import DomainError, LossRecord, ThresholdGrid, check_losses


logger = logging.getLogger(__name__)


SCHEDULE_KINDS = ("iid", "immediate", "stepwise", "custom")

TASKS = ("ter", "cls", "reg")

SOURCES = ("in", "out")

# Columns each task needs in a score file, besides "t".
TASK_COLUMNS = {
    "ter": ("score", "source"),
    "cls": ("score",),
    "reg": ("yhat", "y"),
}


class ScoreFileError(ValueError):
    """A score file does not follow the expected schema."""

    def __init__(self, path, line, message):
        super().__init__(f"{path}, line {line}: {message}")
        self.path = path
        self.line = line


@dataclass(frozen=True)
class ShiftSchedule:
    """Time profile of the outlier mixture weight π_t^out.

    Parameters
    ----------
    kind : str
        One of SCHEDULE_KINDS.
    horizon : int
        Number of steps T.
    t_out : int
        Steps between increments of a stepwise schedule.
    step_size : float
        Increment of a stepwise schedule.
    shift_start : int
        First step with π = 1 for the immediate schedule.
    weights : tuple of float
        Per-step weights of a custom schedule (length ``horizon``).
    """

    kind: str = "stepwise"
    horizon: int = 1500
    t_out: int = 200
    step_size: float = 0.05
    shift_start: int = 1
    weights: tuple = ()

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise DomainError(f"Unknown schedule kind: {self.kind}. "
                              f"Available: {', '.join(SCHEDULE_KINDS)}")
        if self.horizon < 1:
            raise DomainError(f"Horizon must be at least 1, got {self.horizon}")
        if self.t_out < 1:
            raise DomainError(f"t_out must be at least 1, got {self.t_out}")
        if not 0 <= self.step_size <= 1:
            raise DomainError(f"Step size must lie in [0, 1], got {self.step_size}")
        if self.shift_start < 1:
            raise DomainError(f"Shift start must be at least 1, got {self.shift_start}")
        if self.kind == "custom":
            weights = tuple(float(w) for w in self.weights)
            object.__setattr__(self, "weights", weights)
            if len(weights) != self.horizon:
                raise DomainError(f"Custom schedule has {len(weights)} weights, "
                                  f"expected {self.horizon}")
            if any(not 0 <= w <= 1 for w in weights):
                raise DomainError("Custom schedule weights must lie in [0, 1]")

    @classmethod
    def iid(cls, horizon):
        return cls("iid", horizon)

    @classmethod
    def immediate(cls, horizon, shift_start=1):
        return cls("immediate", horizon, shift_start=shift_start)

    @classmethod
    def stepwise(cls, horizon=1500, t_out=200, step_size=0.05):
        return cls("stepwise", horizon, t_out=t_out, step_size=step_size)

    @classmethod
    def custom(cls, weights):
        return cls("custom", len(weights), weights=tuple(weights))

    @classmethod
    def dip_then_rise(cls, horizon=2000, period=365, levels=(0.1, 0.05, 0.3, 0.5, 0.7)):
        """Piecewise-constant schedule that drops after the first period and
        rises steeply afterwards, one level per period."""
        weights = [levels[min((t-1) // period, len(levels)-1)] for t in range(1, horizon+1)]
        return cls.custom(weights)

    def pi_out(self, t):
        if not 1 <= t <= self.horizon:
            raise DomainError(f"Step {t} outside the schedule horizon 1..{self.horizon}")
        if self.kind == "iid":
            return 0.0
        if self.kind == "immediate":
            return 1.0 if t >= self.shift_start else 0.0
        if self.kind == "stepwise":
            return min(1.0, ((t-1) // self.t_out) * self.step_size)
        return self.weights[t-1]

    def pi_out_array(self):
        return np.array([self.pi_out(t) for t in range(1, self.horizon+1)])


@dataclass(frozen=True)
class ScoreRecord:
    """One observation as exported by a predictor.

    ``score`` is the outlier score (TER) or the true-class probability
    (classification miscoverage). Regression records carry ``yhat`` and ``y``
    instead.
    """

    t: int
    score: Optional[float] = None
    source: Optional[str] = None
    yhat: Optional[float] = None
    y: Optional[float] = None


def ter_loss(record, psi):
    """Total-error-rate loss: 1 for a flagged inlier (score ≥ ψ) or a
    missed outlier (score < ψ), 0 otherwise. ``psi`` may be an array."""
    if record.source not in SOURCES:
        raise DomainError(f"TER loss needs source 'in' or 'out', got {record.source!r}")
    flagged = record.score >= np.asarray(psi)
    loss = flagged if record.source == "in" else ~flagged
    return loss.astype(int) if isinstance(loss, np.ndarray) else int(loss)


def miscoverage_loss_cls(record, psi):
    """1 iff the true class is left out of the set {y : p̂(y|x) ≥ ψ}."""
    loss = record.score < np.asarray(psi)
    return loss.astype(int) if isinstance(loss, np.ndarray) else int(loss)


def miscoverage_loss_reg(record, psi):
    """1 iff y falls outside the closed interval [ŷ - ψ, ŷ + ψ]."""
    loss = abs(record.y - record.yhat) > np.asarray(psi)
    return loss.astype(int) if isinstance(loss, np.ndarray) else int(loss)


LOSS_FUNCTIONS = {
    "ter": ter_loss,
    "cls": miscoverage_loss_cls,
    "reg": miscoverage_loss_reg,
}


def task_losses(records, grid, task):
    """(B, n) matrix of losses of ``records`` against every threshold."""
    if task not in TASKS:
        raise DomainError(f"Unknown task: {task}. Available: {', '.join(TASKS)}")
    psi = grid.array if isinstance(grid, ThresholdGrid) else np.asarray(grid, dtype=float)
    if not records:
        raise DomainError("Empty batch")
    if task == "ter":
        if any(r.source not in SOURCES for r in records):
            raise DomainError("TER loss needs source 'in' or 'out' on every record")
        score = np.array([r.score for r in records])[:, None]
        outlier = np.array([r.source == "out" for r in records])[:, None]
        return ((score >= psi) != outlier).astype(float)
    if task == "cls":
        score = np.array([r.score for r in records])[:, None]
        return (score < psi).astype(float)
    residual = np.abs(np.array([r.y - r.yhat for r in records]))[:, None]
    return (residual > psi).astype(float)


class BetaScores:
    """Parametric score pool: scores drawn from Beta(a, b)."""

    def __init__(self, a, b):
        if a <= 0 or b <= 0:
            raise DomainError(f"Beta parameters must be positive, got ({a}, {b})")
        self.a = a
        self.b = b
        self._dist = stats.beta(a, b)

    def sample(self, rng, size=None):
        return rng.beta(self.a, self.b, size)

    def cdf(self, x):
        return self._dist.cdf(x)

    def __repr__(self):
        return f"BetaScores({self.a}, {self.b})"


class EmpiricalScores:
    """Score pool backed by observed scores (e.g. read from a file)."""

    def __init__(self, scores):
        scores = check_losses(scores).ravel()
        if scores.size == 0:
            raise DomainError("Empty score pool")
        self.scores = np.sort(scores)

    def sample(self, rng, size=None):
        return rng.choice(self.scores, size)

    def cdf(self, x):
        """P(score < x)."""
        return np.searchsorted(self.scores, x, side="left") / self.scores.size


def sample_mixture(schedule, t, rng, inliers, outliers):
    """Draws one ScoreRecord at step ``t``: the source is outlier with
    probability π_t^out, the score comes from the matching pool."""
    source = "out" if rng.random() < schedule.pi_out(t) else "in"
    pool = outliers if source == "out" else inliers
    return ScoreRecord(t, float(pool.sample(rng)), source)


@dataclass(frozen=True, eq=False)
class StreamStep:
    """Everything a monitor consumes at one step: the observed losses and,
    when known, the ground truth (exact risk or a fresh oracle batch mean)."""

    record: LossRecord
    true_risk: Optional[np.ndarray] = None
    oracle: Optional[LossRecord] = None

    @property
    def t(self):
        return self.record.t


class SyntheticStream:
    """Mixture-sampled stream of task losses over a threshold grid.

    Iterating the stream twice yields identical steps: every iteration
    restarts the generator from ``seed``.

    Parameters
    ----------
    schedule : ShiftSchedule
    grid : ThresholdGrid
    task : str
        One of TASKS.
    batch : int
        Observations per step.
    inliers, outliers : BetaScores or EmpiricalScores
    seed : int or np.random.SeedSequence
    oracle_size : int or None
        When set, every step also carries the mean loss of a fresh batch of
        this many draws (empirical oracle).
    residual_scale : float
        For the regression task, residuals are score * residual_scale.
    """

    def __init__(self, schedule, grid, task="ter", batch=1, inliers=None, outliers=None,
                 seed=0, oracle_size=None, residual_scale=0.05):
        if task not in TASKS:
            raise DomainError(f"Unknown task: {task}. Available: {', '.join(TASKS)}")
        if batch < 1:
            raise DomainError(f"Batch size must be at least 1, got {batch}")
        if oracle_size is not None and oracle_size < 1:
            raise DomainError(f"Oracle batch size must be at least 1, got {oracle_size}")
        if residual_scale <= 0:
            raise DomainError(f"Residual scale must be positive, got {residual_scale}")
        self.schedule = schedule
        self.grid = grid
        self.task = task
        self.batch = batch
        self.inliers, self.outliers = default_pools(task, inliers, outliers)
        self.seed = seed
        self.oracle_size = oracle_size
        self.residual_scale = residual_scale

    @property
    def horizon(self):
        return self.schedule.horizon

    def _rng(self):
        return np.random.default_rng(self.seed)

    def _draw(self, rng, pi, size):
        outlier = rng.random(size) < pi
        scores = np.where(outlier, self.outliers.sample(rng, size), self.inliers.sample(rng, size))
        return scores, outlier

    def _losses(self, scores, outlier):
        psi = self.grid.array
        s = scores[:, None]
        if self.task == "ter":
            return ((s >= psi) != outlier[:, None]).astype(float)
        if self.task == "cls":
            return (s < psi).astype(float)
        return (s * self.residual_scale > psi).astype(float)

    def true_risk(self, t):
        """Exact per-threshold risk at step ``t`` under the mixture."""
        pi = self.schedule.pi_out(t)
        psi = self.grid.array
        if self.task == "ter":
            return (1-pi) * (1 - self.inliers.cdf(psi)) + pi * self.outliers.cdf(psi)
        if self.task == "cls":
            return (1-pi) * self.inliers.cdf(psi) + pi * self.outliers.cdf(psi)
        x = psi / self.residual_scale
        return (1-pi) * (1 - self.inliers.cdf(x)) + pi * (1 - self.outliers.cdf(x))

    def risk_profile(self):
        """(T, n) matrix of exact risks."""
        return np.array([self.true_risk(t) for t in range(1, self.horizon+1)])

    def __iter__(self):
        rng = self._rng()
        for t in range(1, self.horizon+1):
            pi = self.schedule.pi_out(t)
            scores, outlier = self._draw(rng, pi, self.batch)
            record = LossRecord(t, self._losses(scores, outlier).mean(axis=0), self.batch)
            oracle = None
            if self.oracle_size is not None:
                o_scores, o_outlier = self._draw(rng, pi, self.oracle_size)
                oracle = LossRecord(t, self._losses(o_scores, o_outlier).mean(axis=0),
                                    self.oracle_size)
            yield StreamStep(record, self.true_risk(t), oracle)

    def score_records(self):
        """Raw observations, ``batch`` per step, as they would be exported
        to a score file."""
        rng = self._rng()
        for t in range(1, self.horizon+1):
            scores, outlier = self._draw(rng, self.schedule.pi_out(t), self.batch)
            for score, out in zip(scores, outlier):
                score = float(score)
                if self.task == "ter":
                    yield ScoreRecord(t, score, "out" if out else "in")
                elif self.task == "cls":
                    yield ScoreRecord(t, score)
                else:
                    y = float(rng.uniform(0.95, 1.0))
                    sign = 1.0 if rng.random() < 0.5 else -1.0
                    yield ScoreRecord(t, yhat=y + sign*score*self.residual_scale, y=y)


def default_pools(task, inliers=None, outliers=None):
    """Default Beta pools per task. For TER inlier scores sit low and
    outlier scores spread over the middle of [0,1]; for classification the
    true-class probability degrades from Beta(8,2) to Beta(2,2); for
    regression residual fractions grow from Beta(1,8) to Beta(2,2)."""
    defaults = {
        "ter": ((1, 8), (2, 2)),
        "cls": ((8, 2), (2, 2)),
        "reg": ((1, 8), (2, 2)),
    }
    (a_in, b_in), (a_out, b_out) = defaults[task]
    return (inliers or BetaScores(a_in, b_in)), (outliers or BetaScores(a_out, b_out))


class RiskProfileStream:
    """Bernoulli losses whose per-column mean follows a known profile.

    Parameters
    ----------
    profile : callable
        Maps a step t (1-based) to the loss mean, a scalar or one value per
        column.
    width : int
        Number of columns.
    horizon : int
    batch : int
    seed : int or np.random.SeedSequence
    """

    def __init__(self, profile, width, horizon, batch=1, seed=0):
        if width < 1 or horizon < 1 or batch < 1:
            raise DomainError("Width, horizon and batch must all be at least 1")
        self.profile = profile
        self.width = width
        self.horizon = horizon
        self.batch = batch
        self.seed = seed

    def true_risk(self, t):
        risk = np.broadcast_to(np.asarray(self.profile(t), dtype=float), (self.width,))
        return check_losses(risk)

    def __iter__(self):
        rng = np.random.default_rng(self.seed)
        for t in range(1, self.horizon+1):
            risk = self.true_risk(t)
            hits = rng.binomial(self.batch, risk)
            yield StreamStep(LossRecord(t, hits / self.batch, self.batch), risk)

    @classmethod
    def changepoint(cls, epsilon, mu, t_shift, width, horizon, pre_mean=None, seed=0):
        """Mean ``pre_mean`` (default ε) up to ``t_shift``, ε + μ afterwards."""
        if mu <= 0:
            raise DomainError(f"Violation intensity must be positive, got {mu}")
        before = epsilon if pre_mean is None else pre_mean
        after = epsilon + mu
        if after > 1:
            raise DomainError(f"ε + μ = {after} exceeds 1")
        return cls(lambda t: before if t <= t_shift else after, width, horizon, seed=seed)


def _parse_float(path, line, name, text):
    try:
        value = float(text)
    except (TypeError, ValueError):
        raise ScoreFileError(path, line, f"column {name!r} is not a number: {text!r}") from None
    if not np.isfinite(value):
        raise ScoreFileError(path, line, f"column {name!r} is not finite: {text!r}")
    return value


def ingest_scores(path, task="ter"):
    """Reads a delimited score file.

    The file has a header row and one observation per line. Column ``t``
    (integer ≥ 1) is always required; the remaining columns depend on the
    task (see TASK_COLUMNS). Rows sharing a time index form one batch. Time
    indices start at 1 and never decrease or skip a step, so the batch
    position in the file is its stream time.

    Returns
    -------
    records : list of ScoreRecord

    Raises
    ------
    ScoreFileError
        With the offending line number.
    """
    if task not in TASKS:
        raise DomainError(f"Unknown task: {task}. Available: {', '.join(TASKS)}")
    required = ("t",) + TASK_COLUMNS[task]
    records = []
    with open(path, newline="", encoding="utf-8") as stream:
        sample = stream.read(4096)
        stream.seek(0)
        try:
            dialect = csv.Sniffer().sniff(sample, delimiters=",;\t")
        except csv.Error:
            dialect = csv.excel
        reader = csv.DictReader(stream, dialect=dialect)
        if reader.fieldnames is None:
            raise ScoreFileError(path, 1, "missing header row")
        fields = [f.strip() for f in reader.fieldnames]
        reader.fieldnames = fields
        missing = [c for c in required if c not in fields]
        if missing:
            raise ScoreFileError(path, 1, f"missing column(s) {', '.join(missing)}")
        last_t = 0
        for row in reader:
            line = reader.line_num
            try:
                t = int(row["t"])
            except (TypeError, ValueError):
                raise ScoreFileError(path, line, f"column 't' is not an integer: {row['t']!r}") from None
            if t < 1:
                raise ScoreFileError(path, line, f"time index {t} is below 1")
            if t < last_t:
                raise ScoreFileError(path, line, f"time index {t} after {last_t}")
            if t > last_t + 1:
                expected = "the stream must start at t=1" if last_t == 0 else f"expected {last_t + 1}"
                raise ScoreFileError(path, line, f"time index {t} skips steps, {expected}")
            last_t = t
            if task == "reg":
                records.append(ScoreRecord(t, yhat=_parse_float(path, line, "yhat", row["yhat"]),
                                           y=_parse_float(path, line, "y", row["y"])))
                continue
            score = _parse_float(path, line, "score", row["score"])
            if not 0 <= score <= 1:
                raise ScoreFileError(path, line, f"score {score} outside [0, 1]")
            source = None
            if task == "ter":
                source = (row["source"] or "").strip()
                if source not in SOURCES:
                    raise ScoreFileError(path, line, f"source must be 'in' or 'out', got {source!r}")
            records.append(ScoreRecord(t, score, source))
    logger.info("Read %d score records from %s", len(records), path)
    return records


def group_batches(records):
    """Groups consecutive records with the same time index. All batches must
    have the same size and their times must run 1, 2, 3, ..."""
    batches = [list(group) for _, group in groupby(records, key=lambda r: r.t)]
    for t, batch in enumerate(batches, start=1):
        if batch[0].t != t:
            raise DomainError(f"Batch {t} of the stream carries time index {batch[0].t}")
    sizes = {len(b) for b in batches}
    if len(sizes) > 1:
        raise DomainError(f"Mixed batch sizes in stream: {sorted(sizes)}")
    return batches


class ScoreFileStream:
    """Replays ingested score records as a loss stream. The file carries no
    ground truth, so steps have neither a true risk nor an oracle."""

    def __init__(self, records, grid, task="ter"):
        self.batches = group_batches(records)
        self.grid = grid
        self.task = task

    @property
    def horizon(self):
        return len(self.batches)

    @property
    def batch(self):
        return len(self.batches[0]) if self.batches else 0

    def __iter__(self):
        for batch in self.batches:
            losses = task_losses(batch, self.grid, self.task)
            yield StreamStep(LossRecord.from_batch(batch[0].t, losses))


def write_scores(records, path, task="ter"):
    """Writes score records in the format read by ingest_scores."""
    columns = ("t",) + TASK_COLUMNS[task]
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(columns)
        for record in records:
            writer.writerow([repr(getattr(record, c)) if isinstance(getattr(record, c), float)
                             else getattr(record, c) for c in columns])
            count += 1
    logger.info("Wrote %d score records to %s", count, path)
    return count


class StackedStream:
    """Runs several streams side by side, concatenating their columns.

    Monte-Carlo trials become column blocks of one wider stream; trackers
    treat columns independently so each block evolves exactly as it would
    alone. Ground truth is carried only when every member stream has it.
    """

    def __init__(self, streams):
        self.streams = list(streams)
        if not self.streams:
            raise DomainError("Nothing to stack")

    @property
    def horizon(self):
        return min(s.horizon for s in self.streams)

    def __iter__(self):
        for steps in zip(*self.streams):
            sizes = {s.record.batch_size for s in steps}
            if len(sizes) > 1:
                raise DomainError(f"Mixed batch sizes across stacked streams: {sorted(sizes)}")
            t = steps[0].t
            record = LossRecord(t, np.concatenate([s.record.values for s in steps]), sizes.pop())
            true_risk = None
            if all(s.true_risk is not None for s in steps):
                true_risk = np.concatenate([s.true_risk for s in steps])
            oracle = None
            if all(s.oracle is not None for s in steps):
                oracle = LossRecord(t, np.concatenate([s.oracle.values for s in steps]),
                                    steps[0].oracle.batch_size)
            yield StreamStep(record, true_risk, oracle)

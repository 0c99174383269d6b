"""Experiment configuration, orchestration and result files.

A sweep runs every tracker over every (window S, batch B) cell on R seeded
trials. Trials are stacked side by side as columns of one wide stream, so a
cell costs one pass over the horizon per tracker. With several workers the
trials are cut into contiguous blocks, one task per (B, block), and the block
results are joined in trial order. Results are written as delimited text plus
one metadata document:

summary.csv
    One row per (S, B, tracker): delay mean/std over non-negative delays, mean
    delay over the thresholds the shift pushes into violation, censoring and
    false-alarm counts, fraction of thresholds with false-alarm rate above 0
    and above δ.
records.csv
    One row per (S, B, tracker, trial, ψ) StoppingRecord.
trace.csv
    Per-step statistic and stop flag of every threshold of trial 0, plus one
    confidence-set size row per (S, B, tracker, t).
metadata.json
    Config, config hash, seed, conventions, timings and peak memory.
"""

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import numpy as np
from scipy import stats
from tqdm import tqdm

from .betting import STRATEGY_KINDS, BettingStrategy
from .core import DomainError, RiskSpec, ThresholdGrid, WindowConfig
from .monitor import (GROUND_TRUTH_MODES, false_alarm_rate, delay_summary, run_columns,
                      shift_delays, stopping_records, StoppingRecord)
from .streams import (SCHEDULE_KINDS, TASKS, BetaScores, ScoreFileStream, ShiftSchedule,
                      StackedStream, SyntheticStream, ingest_scores)
from .trackers import TRACKER_KINDS, WEALTH_KINDS, Tracker, rate_limit
from .utils import Timer, format_number, get_memory_usage, stable_hash, trial_seed


logger = logging.getLogger(__name__)


WORKERS_ENV = "RISKMONITOR_WORKERS"

# Fields that do not change what is computed.
NON_SEMANTIC_FIELDS = ("output_dir", "workers", "progress")

SUMMARY_COLUMNS = ("window", "batch", "tracker", "strategy", "delay_mean", "delay_std",
                   "delays", "shift_delay_mean", "shift_delays", "censored", "false_alarms",
                   "records", "trials", "thresholds", "fp_positive", "fp_above_delta")

RECORD_COLUMNS = ("window", "batch", "tracker", "trial", "psi", "tau_star", "tau", "delay",
                  "censored", "false_alarm")

TRACE_COLUMNS = ("window", "batch", "tracker", "t", "psi", "statistic", "stopped", "cs_size")

CONVENTIONS = {
    "delay": "tau - tau_star, both on stream time with burn-in steps counted",
    "delay_mean": "censored records and negative delays (false alarms) are excluded",
    "shift_delay_mean": "thresholds risk-controlled at t=1 and violated by the horizon; "
                        "unflagged ones count horizon + 1 - tau_star, false alarms are excluded",
    "false_alarm": "signal before tau_star, or signal with no violation at all; "
                   "reverse mode: entry while the true risk exceeds epsilon",
    "trace": "per-threshold rows cover trial 0 only; cs_size rows start at t=1",
}


class ConfigError(ValueError):
    """Invalid experiment configuration. ``errors`` lists every problem."""

    def __init__(self, errors):
        super().__init__("Invalid configuration:\n  " + "\n  ".join(errors))
        self.errors = list(errors)


def read_config_file(path):
    """Field values stored as a JSON object in ``path``."""
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError([f"{path}: not valid JSON ({e})"]) from None
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: expected a JSON object"])
    return data


def _default_strategies():
    return {"wealth_mult": "agra", "wealth_sum": "agra", "wealth_eb": "eb_plugin",
            "wealth_reverse_iid": "agra"}


@dataclass
class ExperimentConfig:
    epsilon: float = 0.1
    delta: float = 0.1
    grid_lo: float = 0.0
    grid_hi: float = 1.0
    resolution: int = 101
    windows: list = field(default_factory=lambda: [None, 200, 50, 10])
    batches: list = field(default_factory=lambda: [1, 10, 50])
    strict_window: bool = False
    burn_in: Optional[int] = None
    trackers: list = field(default_factory=lambda: ["running_risk", "wealth_mult",
                                                    "wealth_sum", "wealth_eb"])
    strategies: dict = field(default_factory=_default_strategies)
    fixed_rate: float = 0.5
    eb_cap: float = 0.5
    task: str = "ter"
    schedule: str = "stepwise"
    t_out: int = 200
    step_size: float = 0.05
    shift_start: int = 1
    weights: list = field(default_factory=list)
    inlier_beta: Optional[list] = None
    outlier_beta: Optional[list] = None
    residual_scale: float = 0.05
    ground_truth: str = "auto"
    oracle_size: int = 1000
    input_path: Optional[str] = None
    trials: int = 50
    horizon: int = 1500
    seed: int = 0
    output_dir: str = "results"
    workers: int = 1
    progress: bool = True

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError([f"unknown field {name!r}" for name in unknown])
        return cls(**data)

    @classmethod
    def from_file(cls, path):
        return cls.from_dict(read_config_file(path))

    @classmethod
    def with_environment(cls, **kwargs):
        """Defaults, then the worker count from the environment, then
        ``kwargs``."""
        workers = os.environ.get(WORKERS_ENV)
        config = cls.from_dict(kwargs)
        if workers is not None and "workers" not in kwargs:
            try:
                config.workers = int(workers)
            except ValueError:
                raise ConfigError([f"{WORKERS_ENV} must be an integer, got {workers!r}"]) from None
        return config

    def semantic_dict(self):
        data = asdict(self)
        for name in NON_SEMANTIC_FIELDS:
            data.pop(name)
        return data

    def config_hash(self):
        return stable_hash(self.semantic_dict())

    def validate(self):
        """Checks every field and raises ConfigError listing all problems."""
        errors = []
        if not 0 < self.epsilon < 1:
            errors.append(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not 0 < self.delta < 1:
            errors.append(f"delta must lie in (0, 1), got {self.delta}")
        if not 0 <= self.grid_lo <= self.grid_hi <= 1:
            errors.append(f"grid bounds [{self.grid_lo}, {self.grid_hi}] not inside [0, 1]")
        if self.resolution < 1:
            errors.append(f"resolution must be at least 1, got {self.resolution}")
        if not self.windows:
            errors.append("at least one window is needed")
        for s in self.windows:
            if s is not None and (not isinstance(s, int) or s < 1):
                errors.append(f"window must be null or an integer ≥ 1, got {s!r}")
        if self.strict_window and None in self.windows:
            errors.append("strict windowing needs every window to have a length")
        if not self.batches:
            errors.append("at least one batch size is needed")
        for b in self.batches:
            if not isinstance(b, int) or b < 1:
                errors.append(f"batch size must be an integer ≥ 1, got {b!r}")
        if self.burn_in is not None and self.burn_in < 0:
            errors.append(f"burn-in cannot be negative, got {self.burn_in}")
        if not self.trackers:
            errors.append("at least one tracker is needed")
        for kind in self.trackers:
            if kind not in TRACKER_KINDS:
                errors.append(f"unknown tracker {kind!r}")
            elif kind == "oracle_risk" and self.input_path is not None:
                errors.append("the oracle tracker needs a synthetic stream")
        for kind, strategy in self.strategies.items():
            if kind not in TRACKER_KINDS:
                errors.append(f"strategy given for unknown tracker {kind!r}")
            if strategy not in STRATEGY_KINDS:
                errors.append(f"unknown strategy {strategy!r} for {kind}")
            elif strategy == "eb_plugin" and kind == "wealth_reverse_iid":
                errors.append("the reverse tracker cannot use the eb_plugin strategy")
        for kind in self.trackers:
            if kind in WEALTH_KINDS + ("wealth_reverse_iid",) and kind not in self.strategies:
                errors.append(f"no strategy for tracker {kind}")
        if self.fixed_rate < 0:
            errors.append(f"fixed rate must be non-negative, got {self.fixed_rate}")
        elif 0 < self.epsilon < 1 and self.fixed_rate >= 1/self.epsilon:
            errors.append(f"fixed rate must be below 1/epsilon, got {self.fixed_rate}")
        if not 0 < self.eb_cap < 1:
            errors.append(f"EB cap must lie in (0, 1), got {self.eb_cap}")
        elif 0 < self.epsilon < 1 and self.fixed_rate >= 0:
            errors.extend(self._rate_domain_errors())
        if self.task not in TASKS:
            errors.append(f"unknown task {self.task!r}")
        if self.schedule not in SCHEDULE_KINDS:
            errors.append(f"unknown schedule {self.schedule!r}")
        elif self.schedule == "custom" and len(self.weights) != self.horizon:
            errors.append(f"custom schedule has {len(self.weights)} weights for horizon {self.horizon}")
        if self.t_out < 1:
            errors.append(f"t_out must be at least 1, got {self.t_out}")
        if not 0 <= self.step_size <= 1:
            errors.append(f"step size must lie in [0, 1], got {self.step_size}")
        if self.shift_start < 1:
            errors.append(f"shift start must be at least 1, got {self.shift_start}")
        for name in ("inlier_beta", "outlier_beta"):
            params = getattr(self, name)
            if params is not None and (len(params) != 2 or min(params) <= 0):
                errors.append(f"{name} must be two positive numbers, got {params!r}")
        if self.residual_scale <= 0:
            errors.append(f"residual scale must be positive, got {self.residual_scale}")
        if self.ground_truth not in GROUND_TRUTH_MODES:
            errors.append(f"unknown ground truth mode {self.ground_truth!r}")
        if self.oracle_size < 1:
            errors.append(f"oracle size must be at least 1, got {self.oracle_size}")
        if self.input_path is not None:
            if not os.path.isfile(self.input_path):
                errors.append(f"input file {self.input_path} does not exist")
            if self.trials != 1:
                errors.append("a score file is a single stream, trials must be 1")
            if self.ground_truth in ("exact", "oracle"):
                errors.append("score files carry no ground truth")
        if self.trials < 1:
            errors.append(f"trials must be at least 1, got {self.trials}")
        if self.horizon < 1:
            errors.append(f"horizon must be at least 1, got {self.horizon}")
        if self.workers < 1:
            errors.append(f"workers must be at least 1, got {self.workers}")
        if errors:
            raise ConfigError(errors)

    def _rate_domain_errors(self):
        """Trackers whose strategy can bet outside the rates they accept."""
        spec = RiskSpec(self.epsilon, self.delta if 0 < self.delta < 1 else 0.1)
        errors = []
        for kind in self.trackers:
            name = self.strategies.get(kind)
            if kind not in TRACKER_KINDS or name not in STRATEGY_KINDS:
                continue
            reverse = kind == "wealth_reverse_iid"
            highest = BettingStrategy(name, self.fixed_rate, self.eb_cap).max_rate(spec, reverse)
            limit = rate_limit(kind, spec)
            if highest >= limit:
                errors.append(f"{name} rates reach {format_number(highest)} but {kind} "
                              f"needs rates below {format_number(limit)}")
        return errors

    @property
    def spec(self):
        return RiskSpec(self.epsilon, self.delta)

    @property
    def grid(self):
        return ThresholdGrid.linspace(self.grid_lo, self.grid_hi, self.resolution)

    def shift_schedule(self):
        if self.schedule == "custom":
            return ShiftSchedule.custom(self.weights)
        return ShiftSchedule(self.schedule, self.horizon, self.t_out, self.step_size,
                             self.shift_start)

    def window_config(self, window, batch):
        return WindowConfig(window, batch, self.burn_in, self.strict_window)

    def strategy(self, kind):
        name = self.strategies.get(kind)
        if name is None:
            return None
        return BettingStrategy(name, self.fixed_rate, self.eb_cap)

    def synthetic_stream(self, trial, batch):
        inliers = BetaScores(*self.inlier_beta) if self.inlier_beta else None
        outliers = BetaScores(*self.outlier_beta) if self.outlier_beta else None
        oracle_size = self.oracle_size if self.ground_truth == "oracle" or \
            "oracle_risk" in self.trackers else None
        return SyntheticStream(self.shift_schedule(), self.grid, self.task, batch, inliers,
                               outliers, trial_seed(self.seed, trial, batch), oracle_size,
                               self.residual_scale)


@dataclass(frozen=True, eq=False)
class TraceBlock:
    """Per-step statistics and stop flags of one tracker on one stream."""

    window: Optional[int]
    batch: int
    tracker: str
    psi: tuple
    statistics: np.ndarray
    stopped: np.ndarray
    reverse: bool = False

    @classmethod
    def from_result(cls, result, window=None, batch=1):
        return cls(window, batch, result.tracker, result.grid.values,
                   result.statistics, result.stopped, result.run.reverse)

    def cs_sizes(self):
        members = self.stopped if self.reverse else ~self.stopped
        return members.sum(axis=1)


@dataclass
class CellResult:
    window: Optional[int]
    batch: int
    tracker: str
    strategy: Optional[str]
    records: list
    trace: TraceBlock


@dataclass
class ExperimentBundle:
    """Everything a run produced, in memory or as loaded from disk."""

    metadata: dict
    summary: list
    records: dict

    @property
    def trials(self):
        return self.metadata.get("trials", 0)


def _window_label(window):
    return "none" if window is None else str(window)


def _parse_window(text):
    return None if text in ("", "none") else int(text)


def _run_block(config, batch, trials):
    """Runs every (window, tracker) cell sharing batch size ``batch`` on the
    trials in ``trials``, stacked as column blocks."""
    grid = config.grid
    n = len(grid)
    if config.input_path is not None:
        records = ingest_scores(config.input_path, config.task)
        stream = ScoreFileStream(records, grid, config.task)
        batch = stream.batch
        steps = list(stream)
    else:
        streams = [config.synthetic_stream(k, batch) for k in trials]
        steps = list(StackedStream(streams))
    width = n * len(trials)
    results = []
    for window in config.windows:
        for kind in config.trackers:
            tracker = Tracker(kind, config.spec, config.window_config(window, batch),
                              config.strategy(kind) if kind not in ("running_risk", "oracle_risk") else None)
            run = run_columns(tracker, steps, config.horizon, width, config.ground_truth)
            records = []
            for j, k in enumerate(trials):
                records.extend(stopping_records(grid.values, run, range(j*n, (j+1)*n), trial=k))
            trace = None
            if trials[0] == 0:
                trace = TraceBlock(window, batch, kind, grid.values, run.statistics[:, :n].copy(),
                                   run.stopped[:, :n].copy(), run.reverse)
            logger.info("Cell S=%s B=%d %s done for trials %d-%d", _window_label(window), batch,
                        kind, trials[0], trials[-1])
            results.append(CellResult(window, batch, kind, config.strategies.get(kind)
                                      if tracker.needs_rate else None, records, trace))
    return results


def trial_blocks(trials, workers):
    """Splits trials 0..trials-1 into at most ``workers`` contiguous blocks."""
    return [range(int(b[0]), int(b[-1]) + 1)
            for b in np.array_split(np.arange(trials), min(workers, trials))]


def merge_cells(parts):
    """Joins the per-block results of the same (window, batch, tracker) cell.
    Records keep block order; the trace comes from the block holding trial 0."""
    cells = {}
    for part in parts:
        key = (part.window, part.batch, part.tracker)
        if key not in cells:
            cells[key] = CellResult(part.window, part.batch, part.tracker, part.strategy, [], None)
        cells[key].records.extend(part.records)
        if part.trace is not None:
            cells[key].trace = part.trace
    return list(cells.values())


def summarize(cell, trials, delta, horizon):
    by_trial = [[r for r in cell.records if r.trial == k] for k in range(trials)]
    fp = false_alarm_rate(by_trial, delta)
    delays = delay_summary(cell.records)
    shifted = list(shift_delays(cell.records, horizon).values())
    return {
        "window": _window_label(cell.window),
        "batch": cell.batch,
        "tracker": cell.tracker,
        "strategy": cell.strategy or "",
        "delay_mean": delays.mean,
        "delay_std": delays.std,
        "delays": delays.count,
        "shift_delay_mean": float(np.mean(shifted)) if shifted else None,
        "shift_delays": len(shifted),
        "censored": delays.censored,
        "false_alarms": delays.false_alarms,
        "records": delays.total,
        "trials": trials,
        "thresholds": len(fp.psi),
        "fp_positive": fp.frac_positive,
        "fp_above_delta": fp.frac_above_delta,
    }


def _write_rows(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_number(row[c]) if not isinstance(row[c], str) else row[c]
                             for c in columns])


def _record_rows(cells):
    for cell in cells:
        for r in cell.records:
            yield {"window": _window_label(cell.window), "batch": cell.batch,
                   "tracker": cell.tracker, "trial": r.trial, "psi": r.psi,
                   "tau_star": r.tau_star, "tau": r.tau, "delay": r.delay,
                   "censored": r.censored, "false_alarm": r.false_alarm}


def _trace_rows(blocks):
    for block in blocks:
        window = _window_label(block.window)
        sizes = block.cs_sizes()
        for i in range(block.stopped.shape[0]):
            t = i + 1
            for j, psi in enumerate(block.psi):
                yield {"window": window, "batch": block.batch, "tracker": block.tracker,
                       "t": t, "psi": psi, "statistic": float(block.statistics[i, j]),
                       "stopped": bool(block.stopped[i, j]), "cs_size": None}
            yield {"window": window, "batch": block.batch, "tracker": block.tracker,
                   "t": t, "psi": None, "statistic": None, "stopped": None,
                   "cs_size": int(sizes[i])}


def emit_trace(blocks, path):
    """Writes trace rows of ``blocks`` (TraceBlock or MonitorResult) to
    ``path``: one row per (t, tracker, ψ) and one confidence-set size row
    per (t, tracker). Floats carry 17 significant digits."""
    blocks = [b if isinstance(b, TraceBlock) else TraceBlock.from_result(b) for b in blocks]
    for block in blocks:
        if block.statistics is None:
            raise DomainError(f"No statistics kept for tracker {block.tracker}")
    _write_rows(path, TRACE_COLUMNS, _trace_rows(blocks))
    logger.info("Wrote trace to %s", path)


def run_experiment(config, write=True):
    """Runs the sweep described by ``config``.

    Parameters
    ----------
    config : ExperimentConfig
    write : bool
        Write summary.csv, records.csv, trace.csv and metadata.json into
        ``config.output_dir``. Files already written are removed if a later
        step fails.

    Returns
    -------
    bundle : ExperimentBundle
    """
    config.validate()
    timer = Timer()
    batches = config.batches
    if config.input_path is not None:
        batches = batches[:1]
    tasks = [(b, block) for b in batches for block in trial_blocks(config.trials, config.workers)]
    if config.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(_run_block, config, b, block) for b, block in tasks]
            parts = [c for f in tqdm(futures, desc="blocks", disable=not config.progress)
                     for c in f.result()]
    else:
        parts = [c for b, block in tqdm(tasks, desc="blocks", disable=not config.progress)
                 for c in _run_block(config, b, block)]
    cells = merge_cells(parts)
    summary = [summarize(cell, config.trials, config.delta, config.horizon) for cell in cells]
    cpu, wall = timer.toc()
    memuse = get_memory_usage()
    metadata = {
        "config": config.semantic_dict(),
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "epsilon": config.epsilon,
        "delta": config.delta,
        "rejection_threshold": config.spec.rejection_threshold,
        "burn_in": {str(b): WindowConfig(batch=b, burn_in=config.burn_in).burn_in_steps
                    for b in config.batches},
        "trials": config.trials,
        "horizon": config.horizon,
        "thresholds": config.resolution,
        "conventions": CONVENTIONS,
        "cpu_time": cpu,
        "wall_time": wall,
        "peak_memory_mb": memuse.get("vmpeak"),
    }
    records = {(_window_label(c.window), c.batch, c.tracker): c.records for c in cells}
    bundle = ExperimentBundle(metadata, summary, records)
    if write:
        write_bundle(bundle, cells, config.output_dir)
    logger.info("Experiment %s finished in %.1fs (cpu %.1fs)", metadata["config_hash"][:12],
                wall, cpu)
    return bundle


def write_bundle(bundle, cells, outdir):
    os.makedirs(outdir, exist_ok=True)
    written = []
    try:
        path = os.path.join(outdir, "summary.csv")
        written.append(path)
        _write_rows(path, SUMMARY_COLUMNS, bundle.summary)
        path = os.path.join(outdir, "records.csv")
        written.append(path)
        _write_rows(path, RECORD_COLUMNS, _record_rows(cells))
        path = os.path.join(outdir, "trace.csv")
        written.append(path)
        emit_trace([c.trace for c in cells], path)
        path = os.path.join(outdir, "metadata.json")
        written.append(path)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(bundle.metadata, f, indent=2, sort_keys=True)
    except BaseException:
        for path in written:
            if os.path.exists(path):
                os.remove(path)
        raise
    logger.info("Wrote %s", ", ".join(written))


def _optional_int(text):
    return None if text == "" else int(text)


def load_bundle(outdir):
    """Reads metadata.json, summary.csv and records.csv back from a run
    directory."""
    with open(os.path.join(outdir, "metadata.json"), encoding="utf-8") as f:
        metadata = json.load(f)
    with open(os.path.join(outdir, "summary.csv"), newline="", encoding="utf-8") as f:
        summary = list(csv.DictReader(f))
    records = {}
    with open(os.path.join(outdir, "records.csv"), newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            key = (row["window"], int(row["batch"]), row["tracker"])
            records.setdefault(key, []).append(StoppingRecord(
                float(row["psi"]), _optional_int(row["tau_star"]), _optional_int(row["tau"]),
                row["censored"] == "1", row["false_alarm"] == "1", int(row["trial"])))
    return ExperimentBundle(metadata, summary, records)


@dataclass(frozen=True)
class GuaranteeCheck:
    """False-alarm check of one (S, B, tracker) cell.

    ``worst_lower_bound`` is the largest one-sided lower confidence bound on
    a per-threshold false-alarm rate; the cell passes while it stays at or
    below δ.
    """

    window: str
    batch: int
    tracker: str
    trials: int
    worst_psi: float
    worst_count: int
    worst_lower_bound: float
    frac_above_delta: float
    passed: bool


@dataclass
class GuaranteeReport:
    checks: list
    delta: float
    confidence: float
    message: str = ""

    @property
    def passed(self):
        return bool(self.checks) and all(c.passed for c in self.checks)

    def format(self):
        if not self.checks:
            return f"FAIL: {self.message or 'nothing to check'}"
        lines = [f"False-alarm guarantee at delta={self.delta:g} "
                 f"({self.confidence:.0%} one-sided Clopper-Pearson lower bounds)"]
        for c in self.checks:
            lines.append(f"{'PASS' if c.passed else 'FAIL'} S={c.window} B={c.batch} {c.tracker}: "
                         f"worst psi={c.worst_psi:.4g} with {c.worst_count}/{c.trials} false alarms, "
                         f"lower bound {c.worst_lower_bound:.4f}, "
                         f"%FP>delta={100*c.frac_above_delta:.2f}%")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def clopper_pearson_lower(k, n, confidence=0.95):
    """One-sided lower confidence bound on a binomial proportion."""
    if k == 0:
        return 0.0
    return float(stats.beta.ppf(1-confidence, k, n-k+1))


def validate_guarantees(bundle, spec=None, trackers=None, confidence=0.95):
    """Checks the false-alarm rate of every threshold against δ.

    A cell fails when some threshold's false-alarm rate is above δ beyond
    Monte-Carlo slack, i.e. its one-sided exact binomial lower bound exceeds
    δ. By default only the wealth trackers (which carry the guarantee) are
    checked. An empty bundle fails.
    """
    if spec is None:
        spec = RiskSpec(bundle.metadata["epsilon"], bundle.metadata["delta"])
    if trackers is None:
        trackers = WEALTH_KINDS + ("wealth_reverse_iid",)
    trials = bundle.trials
    if not bundle.records or trials < 1:
        return GuaranteeReport([], spec.delta, confidence, "no trials")
    checks = []
    for (window, batch, kind), records in sorted(bundle.records.items()):
        if kind not in trackers:
            continue
        by_trial = [[r for r in records if r.trial == k] for k in range(trials)]
        fp = false_alarm_rate(by_trial, spec.delta)
        bounds = [clopper_pearson_lower(int(k), trials, confidence) for k in fp.counts]
        worst = int(np.argmax(bounds))
        checks.append(GuaranteeCheck(window, batch, kind, trials, float(fp.psi[worst]),
                                     int(fp.counts[worst]), bounds[worst], fp.frac_above_delta,
                                     bounds[worst] <= spec.delta))
    if not checks:
        return GuaranteeReport([], spec.delta, confidence, "no matching trackers")
    return GuaranteeReport(checks, spec.delta, confidence)


"""Command-line entry point.

Subcommands::

    simulate  write a synthetic score stream to a file
    monitor   run trackers on one configuration (synthetic or a score file)
    sweep     run the (window, batch) grid over R trials
    check     validate the false-alarm guarantee of a finished run

Settings come from the ExperimentConfig defaults, then from a JSON file given
with ``--config``, then from the flags. RISKMONITOR_WORKERS sets the worker
count. Score file columns per task: ter uses t,score,source (source is "in"
or "out"); cls uses t,score (true-class probability); reg uses t,yhat,y.
Rows sharing t form one batch.

Exit status: 0 on success, 1 when a guarantee check fails, 2 on invalid
input or configuration.
"""

import argparse
import logging
import sys

from .core import DomainError
from .experiment import ConfigError, ExperimentConfig, load_bundle, read_config_file, \
    run_experiment, validate_guarantees
from .streams import TASKS, SCHEDULE_KINDS, ScoreFileError, group_batches, ingest_scores, \
    write_scores
from .trackers import TRACKER_KINDS


logger = logging.getLogger(__name__)


def _window(text):
    if text.lower() == "none":
        return None
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"window must be 'none' or ≥ 1, got {text}")
    return value


def _add_stream_flags(parser):
    group = parser.add_argument_group("stream")
    group.add_argument("--task", choices=TASKS)
    group.add_argument("--schedule", choices=SCHEDULE_KINDS)
    group.add_argument("--horizon", type=int, help="number of time steps T")
    group.add_argument("--t-out", dest="t_out", type=int, help="steps between stepwise increments")
    group.add_argument("--step-size", dest="step_size", type=float)
    group.add_argument("--shift-start", dest="shift_start", type=int)
    group.add_argument("--inlier-beta", dest="inlier_beta", type=float, nargs=2, metavar=("A", "B"))
    group.add_argument("--outlier-beta", dest="outlier_beta", type=float, nargs=2, metavar=("A", "B"))
    group.add_argument("--residual-scale", dest="residual_scale", type=float)
    group.add_argument("--seed", type=int)


def _add_monitor_flags(parser):
    group = parser.add_argument_group("monitor")
    group.add_argument("--epsilon", type=float, help="tolerated risk level")
    group.add_argument("--delta", type=float, help="false-alarm budget")
    group.add_argument("--grid-lo", dest="grid_lo", type=float)
    group.add_argument("--grid-hi", dest="grid_hi", type=float)
    group.add_argument("--resolution", type=int, help="number of thresholds")
    group.add_argument("--tracker", dest="trackers", action="append", choices=TRACKER_KINDS)
    group.add_argument("--strategy", dest="strategy_overrides", action="append", default=[],
                       metavar="TRACKER=KIND", help="betting strategy of one tracker")
    group.add_argument("--fixed-rate", dest="fixed_rate", type=float)
    group.add_argument("--eb-cap", dest="eb_cap", type=float)
    group.add_argument("--burn-in", dest="burn_in", type=int)
    group.add_argument("--strict-window", dest="strict_window", action="store_true", default=None)
    group.add_argument("--ground-truth", dest="ground_truth",
                       choices=("auto", "exact", "oracle", "none"))
    group.add_argument("--oracle-size", dest="oracle_size", type=int)
    group.add_argument("--trials", type=int)
    group.add_argument("--workers", type=int)
    group.add_argument("--no-progress", dest="progress", action="store_false", default=None)


CONFIG_FLAGS = ("task", "schedule", "horizon", "t_out", "step_size", "shift_start",
                "inlier_beta", "outlier_beta", "residual_scale", "seed", "epsilon", "delta",
                "grid_lo", "grid_hi", "resolution", "trackers", "fixed_rate", "eb_cap",
                "burn_in", "strict_window", "ground_truth", "oracle_size", "trials", "workers",
                "progress", "windows", "batches", "input_path", "output_dir")


def build_parser():
    parser = argparse.ArgumentParser(prog="riskmonitor", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--log-level", default="WARNING",
                        choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    parser.add_argument("--config", help="JSON file with ExperimentConfig fields")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="write a synthetic score stream")
    _add_stream_flags(simulate)
    simulate.add_argument("--batch", type=int, default=1)
    simulate.add_argument("--out", required=True, help="score file to write")

    monitor = sub.add_parser("monitor", help="run trackers on one stream configuration")
    _add_stream_flags(monitor)
    _add_monitor_flags(monitor)
    monitor.add_argument("--input", dest="input_path", help="score file to monitor")
    monitor.add_argument("--window", dest="windows", type=_window, nargs=1)
    monitor.add_argument("--batch", dest="batches", type=int, nargs=1)
    monitor.add_argument("--out", dest="output_dir")

    sweep = sub.add_parser("sweep", help="run the window/batch grid")
    _add_stream_flags(sweep)
    _add_monitor_flags(sweep)
    sweep.add_argument("--windows", type=_window, nargs="+")
    sweep.add_argument("--batches", type=int, nargs="+")
    sweep.add_argument("--out", dest="output_dir")

    check = sub.add_parser("check", help="validate false-alarm guarantees of a run")
    check.add_argument("rundir")
    check.add_argument("--trackers", nargs="+", choices=TRACKER_KINDS)
    check.add_argument("--confidence", type=float, default=0.95)
    return parser


def build_config(args, **defaults):
    """ExperimentConfig from defaults < config file < flags."""
    data = dict(defaults)
    if args.config:
        data.update(read_config_file(args.config))
    config = ExperimentConfig.with_environment(**data)
    for name in CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            setattr(config, name, list(value) if isinstance(value, (list, tuple)) else value)
    strategies = dict(config.strategies)
    for item in getattr(args, "strategy_overrides", []):
        kind, sep, strategy = item.partition("=")
        if not sep:
            raise ConfigError([f"--strategy expects TRACKER=KIND, got {item!r}"])
        strategies[kind] = strategy
    config.strategies = strategies
    return config


def cmd_simulate(args):
    config = build_config(args)
    config.batches = [args.batch]
    config.trackers = ["running_risk"]
    config.validate()
    stream = config.synthetic_stream(0, args.batch)
    count = write_scores(stream.score_records(), args.out, config.task)
    print(f"Wrote {count} records to {args.out}")
    return 0


def cmd_monitor(args):
    config = build_config(args, windows=[None], batches=[1], trials=1,
                          trackers=["wealth_mult"])
    if config.input_path is not None and args.horizon is None:
        config.horizon = len(group_batches(ingest_scores(config.input_path, config.task)))
    bundle = run_experiment(config)
    _print_summary(bundle)
    return 0


def cmd_sweep(args):
    bundle = run_experiment(build_config(args))
    _print_summary(bundle)
    return 0


def cmd_check(args):
    bundle = load_bundle(args.rundir)
    report = validate_guarantees(bundle, trackers=tuple(args.trackers) if args.trackers else None,
                                 confidence=args.confidence)
    print(report.format())
    return 0 if report.passed else 1


def _print_summary(bundle):
    print(f"config {bundle.metadata['config_hash'][:12]}  seed {bundle.metadata['seed']}  "
          f"1/delta {bundle.metadata['rejection_threshold']:g}")
    for row in bundle.summary:
        delay = "n/a" if row["delay_mean"] is None else \
            f"{row['delay_mean']:.1f} ± {row['delay_std']:.1f}"
        shifted = "n/a" if row["shift_delay_mean"] is None else f"{row['shift_delay_mean']:.1f}"
        print(f"S={row['window']:>4} B={row['batch']:>3} {row['tracker']:<18} delay {delay:>16}  "
              f"shift delay {shifted:>7}  "
              f"%FP>0 {100*row['fp_positive']:6.2f}%  %FP>delta {100*row['fp_above_delta']:6.2f}%")


COMMANDS = {
    "simulate": cmd_simulate,
    "monitor": cmd_monitor,
    "sweep": cmd_sweep,
    "check": cmd_check,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DomainError, ScoreFileError, FloatingPointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

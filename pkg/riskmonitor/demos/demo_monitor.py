#!/usr/bin/env python3

from ..betting import BettingStrategy
from ..core import RiskSpec, ThresholdGrid, WindowConfig
from ..monitor import delay_summary, run_monitor
from ..streams import ShiftSchedule, SyntheticStream
from ..utils import Timer


spec = RiskSpec(epsilon=0.1, delta=0.1)
grid = ThresholdGrid.linspace(0, 1, 21)
schedule = ShiftSchedule.stepwise(horizon=1500, t_out=200)


def main():
    timer = Timer()
    for kind, strategy in (("running_risk", None),
                           ("wealth_mult", BettingStrategy("agra")),
                           ("wealth_sum", BettingStrategy("agra")),
                           ("wealth_eb", BettingStrategy("eb_plugin"))):
        stream = SyntheticStream(schedule, grid, "ter", seed=7)
        result = run_monitor(grid, spec, WindowConfig(), kind, strategy, stream, schedule.horizon)
        summary = delay_summary(result.records)
        sizes = result.cs_sizes()
        print(kind)
        print("  psi-CS size at t=0, 300, 700, 1100, 1500:",
              len(grid), sizes[299], sizes[699], sizes[1099], sizes[1499])
        if summary.mean is not None:
            print(f"  delay {summary.mean:.1f} ± {summary.std:.1f} over {summary.count} thresholds")
        print(f"  censored {summary.censored}, false alarms {summary.false_alarms}")
        # Inspect the thresholds still trusted at the end
        print("  final set:", [f"{psi:.2f}" for psi in result.confidence_set_at(1500).members])
    cpu, wall = timer.toc()
    print(f"CPU time (s): {cpu:.2f}, wall time (s): {wall:.2f}")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3

import numpy as np

from ..betting import BettingStrategy
from ..core import RiskSpec, WindowConfig
from ..monitor import growth_rate_comparison, run_columns
from ..streams import RiskProfileStream
from ..trackers import Tracker
from ..utils import get_memory_usage


spec = RiskSpec(epsilon=0.1, delta=0.1)
trials = 1000
horizon = 2000


def main():
    print(f"Null calibration: {trials} trials of Bernoulli(0.1) losses, T={horizon}")
    for kind, strategy in (("wealth_mult", BettingStrategy("agra")),
                           ("wealth_sum", BettingStrategy("agra")),
                           ("wealth_eb", BettingStrategy("eb_plugin")),
                           ("running_risk", None)):
        stream = RiskProfileStream(lambda t: spec.epsilon, trials, horizon, seed=1)
        run = run_columns(Tracker(kind, spec, WindowConfig(), strategy), stream, horizon,
                          trials, keep_statistics=False)
        rate = np.mean(run.stop_time > 0)
        print(f"  {kind:<14} stop frequency {rate:.3f} (delta = {spec.delta})")

    comparison = growth_rate_comparison(spec, 0.4, trials=trials, horizon=200)
    print("Growth per step on Bernoulli(0.4) losses")
    print(f"  adaptive rate: {comparison.adaptive_growth:.4f} ± {comparison.adaptive_stderr:.4f}")
    print(f"  best fixed rate {comparison.best_fixed_rate:.2f}: {comparison.fixed_growth.max():.4f}")
    print(f"  fixed rates matched by the adaptive one: {len(comparison.dominated_rates())}"
          f" of {len(comparison.fixed_rates)}")
    print("Memory (MB):", get_memory_usage())


if __name__ == "__main__":
    main()

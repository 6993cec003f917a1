#!/usr/bin/env python3
"""True (delta, theta) for each setting: analytic where Gaussian, plus a
Monte Carlo cross-check with standard errors.

Usage:
    python3 scripts/setting_truths.py --draws 10000000
"""

import argparse
import sys

from surrogate_eval import simlab


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--draws", type=int, default=10_000_000)
    p.add_argument("--seed", type=int, default=1)
    args = p.parse_args(argv)

    print(f"{'setting':>7} {'provenance':>11} {'delta':>9} {'theta':>9} {'mc_delta':>9} {'se':>8} {'mc_theta':>9} {'se':>8}")
    for sid in sorted(simlab.SETTINGS):
        spec = simlab.get_setting(sid)
        truth = simlab.setting_truth(spec)
        mc = simlab.monte_carlo_truth(spec, draws=args.draws, seed=args.seed)
        print(f"{sid:>7} {truth.provenance:>11} {truth.delta:9.5f} {truth.theta:9.5f} "
              f"{mc.delta:9.5f} {mc.delta_se:8.1e} {mc.theta:9.5f} {mc.theta_se:8.1e}", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())

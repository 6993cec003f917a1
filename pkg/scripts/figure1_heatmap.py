#!/usr/bin/env python3
"""|theta - delta| over control-mean offsets for a perfect surrogate with a
binary covariate. Writes the grid as CSV and, if matplotlib is available,
a PNG next to it.

Usage:
    python3 scripts/figure1_heatmap.py --delta 5 --lo -40 --hi 40 --step 0.5 --out heatmap.csv
"""

import argparse
import sys
from pathlib import Path

from surrogate_eval.analytics import heatmap_grid, write_heatmap_csv


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--delta", type=float, default=5.0)
    p.add_argument("--lo", type=float, default=-40.0)
    p.add_argument("--hi", type=float, default=40.0)
    p.add_argument("--step", type=float, default=0.5)
    p.add_argument("--out", default="heatmap.csv")
    args = p.parse_args(argv)

    d_y, d_s, values = heatmap_grid(args.delta, (args.lo, args.hi), args.step)
    write_heatmap_csv(args.out, d_y, d_s, values)
    print(f"grid {values.shape[0]}x{values.shape[1]}  max={values.max():.6f}  wrote {args.out}")
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return 0
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(values, origin="lower", extent=(d_s[0], d_s[-1], d_y[0], d_y[-1]), cmap="viridis")
    ax.set_xlabel("d_s")
    ax.set_ylabel("d_y")
    fig.colorbar(im, ax=ax, label="|theta - delta|")
    fig.tight_layout()
    fig.savefig(Path(args.out).with_suffix(".png"), dpi=120)
    return 0


if __name__ == "__main__":
    sys.exit(main())

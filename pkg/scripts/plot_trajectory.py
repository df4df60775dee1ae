#!/usr/bin/env python3
"""Overlay lip-trajectory CSVs (as written by `lipsync traj`) in one figure.

Example:
    python3 scripts/plot_trajectory.py truth.csv with_vloss.csv without_vloss.csv -o curves.png
"""

import argparse
import csv
from pathlib import Path


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("csvs", nargs="+", help="frame,v_pixels trajectory files")
    p.add_argument("-o", "--out", default="trajectory.png")
    args = p.parse_args()

    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        raise SystemExit("plotting needs matplotlib: pip install matplotlib")

    fig, ax = plt.subplots(figsize=(10, 4))
    for path in args.csvs:
        frames, values = [], []
        with open(path) as fh:
            for row in csv.DictReader(fh):
                frames.append(int(row["frame"]))
                values.append(float(row["v_pixels"]))
        ax.plot(frames, values, label=Path(path).stem, linewidth=1.2)
    ax.set_xlabel("frame")
    ax.set_ylabel("v (pixels)")
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()

"""Plot alpha(t) for every trial of a run directory.

    python scripts/plot_traces.py RUN_DIR [--out alpha.png]

Needs matplotlib (``pip install .[plot]``).  Infinite alphas are dropped.
"""

import argparse
import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read_alphas(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [int(r["t"]) for r in rows], [float(r["alpha"]) for r in rows]


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("run_dir", type=Path)
    parser.add_argument("--out", type=Path, default=Path("alpha.png"))
    args = parser.parse_args()

    fig, ax = plt.subplots(figsize=(6, 4))
    for path in sorted((args.run_dir / "traces").glob("trial_*.csv")):
        ts, alphas = read_alphas(path)
        pts = [(t, a) for t, a in zip(ts, alphas) if math.isfinite(a)]
        if pts:
            ax.plot(*zip(*pts), marker=".", linewidth=1, alpha=0.7)
    ax.set_xlabel("t")
    ax.set_ylabel("alpha(t)")
    ax.set_title(args.run_dir.name)
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()

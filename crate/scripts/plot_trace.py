#!/usr/bin/env python3
"""Render best-score-so-far curves from trace.csv, or trade-off curves
from sweep.csv.

Usage:
    python3 scripts/plot_trace.py out/score/trace.csv [plot.png]
    python3 scripts/plot_trace.py out/sweep/sweep.csv [plot.png]
"""

import csv
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def plot_trace(rows, out_path):
    by_agent = defaultdict(list)
    for r in rows:
        by_agent[int(r["agent_id"])].append((int(r["round"]), float(r["best_score_so_far"])))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for agent, points in sorted(by_agent.items()):
        points.sort()
        ax.plot([p[0] for p in points], [p[1] for p in points], label=f"agent {agent}")
    ax.set_xlabel("round")
    ax.set_ylabel("best score so far")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)


def plot_sweep(rows, out_path):
    param = rows[0]["param"]
    xs = [float(r["value"]) for r in rows]
    means = [float(r["mean_final_best_max"]) for r in rows]
    errs = [float(r["stderr_final_best_max"]) for r in rows]
    comm = [float(r["mean_comm_rounds"]) for r in rows]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.errorbar(xs, means, yerr=errs, marker="o")
    ax1.set_xlabel(param)
    ax1.set_ylabel("final best score (max over agents)")
    if param == "D" and max(xs) > 0:
        ax1.set_xscale("symlog")
    ax2.plot(xs, comm, marker="s", color="tab:orange")
    ax2.set_xlabel(param)
    ax2.set_ylabel("mean communication rounds")
    if param == "D" and max(xs) > 0:
        ax2.set_xscale("symlog")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)


def main():
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    in_path = sys.argv[1]
    out_path = sys.argv[2] if len(sys.argv) > 2 else in_path.rsplit(".", 1)[0] + ".png"
    with open(in_path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        sys.exit(f"{in_path}: no data rows")
    if "best_score_so_far" in rows[0]:
        plot_trace(rows, out_path)
    elif "mean_final_best_max" in rows[0]:
        plot_sweep(rows, out_path)
    else:
        sys.exit(f"{in_path}: unrecognized columns")
    print(f"wrote {out_path}")


if __name__ == "__main__":
    main()

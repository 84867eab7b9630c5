"""Render learning-curve and histogram figures from exported metrics CSVs.

Plotting stays out of the experiment module: this reads the delimited output
back in and writes PNG files next to it.
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

CURVE_PANELS = (
    ("avg_reward_per_turn", "average reward per turn"),
    ("avg_discounted_return", "average discounted return"),
    ("avg_turns_per_dialog", "average turns per dialog"),
    ("execution_success_rate", "execution success rate"),
)


def read_aggregate_csv(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return [dict(row) for row in csv.DictReader(fh)]


def read_histogram_csv(path: str) -> dict[str, dict[int, int]]:
    out: dict[str, dict[int, int]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["policy"], {})[int(row["turns_to_execute"])] = int(row["count"])
    return out


def _floats(rows: list[dict], column: str) -> list[float | None]:
    return [float(r[column]) if r[column] != "" else None for r in rows]


def render_learning_curves(
    curves: dict[str, list[dict]], out_path: str, title: str = ""
) -> None:
    """Four-panel learning curves with SEM shading, one line per policy.

    ``curves`` maps a policy label to rows read from its aggregate CSV.
    """
    fig, axes = plt.subplots(2, 2, figsize=(11, 8))
    for ax, (metric, label) in zip(axes.flat, CURVE_PANELS):
        for name in sorted(curves):
            rows = curves[name]
            steps = [int(r["step"]) for r in rows]
            means = _floats(rows, f"{metric}_mean")
            sems = _floats(rows, f"{metric}_sem")
            xs = [s for s, m in zip(steps, means) if m is not None]
            ys = [m for m in means if m is not None]
            ax.plot(xs, ys, marker="o", markersize=3, label=name)
            band = [
                (s, m, e)
                for s, m, e in zip(steps, means, sems)
                if m is not None and e is not None
            ]
            if band:
                bx, bm, be = zip(*band)
                ax.fill_between(
                    bx,
                    [m - e for m, e in zip(bm, be)],
                    [m + e for m, e in zip(bm, be)],
                    alpha=0.2,
                )
        ax.set_xlabel("training steps")
        ax.set_ylabel(label)
        ax.grid(True, alpha=0.3)
    axes.flat[0].legend(loc="best", fontsize=9)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def render_turns_histogram(
    histograms: dict[str, dict[int, int]], out_path: str, title: str = ""
) -> None:
    """Grouped bars of turns needed to execute, normalized per policy."""
    fig, ax = plt.subplots(figsize=(8, 5))
    names = sorted(histograms)
    all_turns = sorted({t for h in histograms.values() for t in h})
    width = 0.8 / max(1, len(names))
    for i, name in enumerate(names):
        hist = histograms[name]
        total = sum(hist.values()) or 1
        xs = [t + (i - (len(names) - 1) / 2) * width for t in all_turns]
        ys = [hist.get(t, 0) / total for t in all_turns]
        ax.bar(xs, ys, width=width, label=name)
    ax.set_xticks(all_turns)
    ax.set_xlabel("turns needed to execute (1 = no clarifying question)")
    ax.set_ylabel("fraction of executions")
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend()
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)


def render_run_directory(run_dir: str) -> list[str]:
    """Render every figure the CSVs in a results directory support; returns
    the paths written."""
    written = []
    curves = {}
    for entry in sorted(os.listdir(run_dir)):
        if entry.endswith("_aggregate.csv"):
            curves[entry[: -len("_aggregate.csv")]] = read_aggregate_csv(
                os.path.join(run_dir, entry)
            )
    if curves:
        out = os.path.join(run_dir, "learning_curves.png")
        render_learning_curves(curves, out)
        written.append(out)
    hist_path = os.path.join(run_dir, "turns_to_execute.csv")
    if os.path.exists(hist_path):
        out = os.path.join(run_dir, "turns_to_execute.png")
        render_turns_histogram(read_histogram_csv(hist_path), out)
        written.append(out)
    return written

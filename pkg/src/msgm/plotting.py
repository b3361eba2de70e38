"""Matplotlib rendering of a sweep: empirical means on the left axis, theory on the right."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .experiments import STRATEGY_COLORS, SweepRow, plot_series  # noqa: E402


def plot_sweep(rows: list[SweepRow], path, estimator: str | None = None, title: str | None = None):
    """Save a dual-axis figure to ``path``; the format follows the file extension."""
    axis, estimator, empirical, theory = plot_series(rows, estimator)
    std = {(r.strategy, r.axis_value): r.std_tv for r in rows if r.estimator == estimator}

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for strategy, series in empirical.items():
        xs, ys = zip(*series)
        err = [std[(strategy, x)] for x in xs]
        ax.errorbar(xs, ys, yerr=err, color=STRATEGY_COLORS[strategy], marker="o", capsize=3,
                    label=f"{strategy}-source (empirical)")
    ax.set_xlabel(axis)
    ax.set_ylabel(f"average TV error ({estimator})")
    if axis in ("n", "K"):
        ax.set_xscale("log")
    handles, labels = ax.get_legend_handles_labels()
    if theory:
        ax2 = ax.twinx()
        for strategy, series in theory.items():
            xs, ys = zip(*series)
            ax2.plot(xs, ys, color=STRATEGY_COLORS[strategy], linestyle="--",
                     label=f"{strategy}-source (theory)")
        ax2.set_ylabel("theoretical bound")
        h2, l2 = ax2.get_legend_handles_labels()
        handles, labels = handles + h2, labels + l2
    ax.legend(handles, labels, fontsize=8, loc="best")
    ax.set_title(title or f"average TV error vs {axis}")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)

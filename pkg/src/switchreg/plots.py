"""Figures rendered straight to files; no interactive backend is ever
touched, so the report path works on headless machines."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

COLORS = ("tab:blue", "tab:green", "tab:red", "tab:purple", "tab:orange", "tab:brown")


def plot_fit(series, result, path) -> None:
    """Observations colored by their most probable state, with one
    fitted curve per regime."""
    fig, ax = plt.subplots(figsize=(8, 5))
    zmax = np.argmax(result.resp.p, axis=1)
    j = result.resp.j
    for k in range(j):
        mask = zmax == k
        color = COLORS[k % len(COLORS)]
        if np.any(mask):
            ax.scatter(
                series.x[mask],
                series.y[mask],
                s=14,
                color=color,
                alpha=0.6,
                label=f"state {k + 1}",
            )
        ax.plot(series.x, result.fitted[:, k], color=color, lw=1.8)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_emse(report, path) -> None:
    """Per-replicate total curve error before and after fitting."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    idx = [o.index for o in report.outcomes]
    init = [float(sum(o.emse_initial)) for o in report.outcomes]
    fin = [float(sum(o.emse_final)) for o in report.outcomes]
    ax.plot(idx, init, "--", color="tab:gray", label="initial")
    ax.plot(idx, fin, "-", color="tab:blue", label="final")
    ax.set_yscale("log")
    ax.set_xlabel("replicate")
    ax.set_ylabel("total pointwise squared error")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

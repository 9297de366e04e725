"""Figures written alongside the study/solve outputs."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (math.sqrt(5) - 1.0) / 2.0

params = {
    "font.size": 9,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "figure.figsize": (4.5, 4.5 * GOLDEN),
    "svg.hashsalt": "hjbfd",  # stable element ids across runs
    "svg.fonttype": "none",
}


def rate_plot(report, path) -> None:
    """Log-log error against h with the fitted line and an h^(2/3) guide."""
    h = np.asarray(report.h)
    err = np.asarray(report.errors)
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        ok = err > 0
        ax.loglog(h[ok], err[ok], "o-", label=f"{report.problem} ({report.reference_kind})")
        if report.rate is not None:
            fit = np.exp(report.intercept) * h**report.rate
            ax.loglog(h, fit, "--", color="0.4", label=f"fit, slope {report.rate:.3f}")
        if ok.any():
            anchor = err[ok][0] / h[ok][0] ** (2 / 3)
            ax.loglog(h, anchor * h ** (2 / 3), ":", color="0.6", label="slope 2/3")
        ax.set_xlabel("h")
        ax.set_ylabel("sup error")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)


def solution_plot(solution, path) -> None:
    """Scatter of a 2D grid function over its value-bearing nodes."""
    grid = solution.grid
    if grid.dim != 2:
        raise ValueError("solution plots are two-dimensional only")
    pts = grid.points
    with plt.rc_context(params):
        fig, ax = plt.subplots(figsize=(4.5, 4.0))
        sc = ax.scatter(pts[:, 0], pts[:, 1], c=solution.values, s=max(1.0, 400 * grid.h**2),
                        marker="s", linewidths=0, cmap="viridis")
        ax.set_aspect("equal")
        ax.set_xlabel("$x_1$")
        ax.set_ylabel("$x_2$")
        fig.colorbar(sc, ax=ax)
        fig.tight_layout()
        fig.savefig(path, metadata={"Date": None})
        plt.close(fig)

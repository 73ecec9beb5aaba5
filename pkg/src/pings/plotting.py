"""Static figures rendered to files (Agg backend, no display)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def view_limits(series: dict[str, np.ndarray], coverage: float = 99.5, pad: float = 0.1):
    """Square window holding ``coverage`` percent of every series' points.

    Far outliers would otherwise shrink all clusters to a dot; the number of
    points left outside is returned so the figure can say so.
    """
    pts = np.concatenate([p for p in series.values() if p.size] or [np.zeros((1, 2))])
    lo_q, hi_q = (100 - coverage) / 2, 100 - (100 - coverage) / 2
    lo, hi = np.percentile(pts, lo_q, axis=0), np.percentile(pts, hi_q, axis=0)
    half = 0.5 * (1 + 2 * pad) * max(float(np.max(hi - lo)), 1e-9)
    centre = 0.5 * (lo + hi)
    lims = np.stack([centre - half, centre + half], axis=1)
    outside = int(np.sum(np.any((pts < lims[:, 0]) | (pts > lims[:, 1]), axis=1)))
    return lims, outside


def projection_figure(series: dict[str, np.ndarray], axes=(0, 1), path=None, max_points: int = 10_000):
    """Overlay 2D projections of several point clouds."""
    fig, ax = plt.subplots(figsize=(5.5, 5))
    series = {label: pts[:max_points] for label, pts in series.items()}
    for label, pts in series.items():
        ax.scatter(pts[:, 0], pts[:, 1], s=2, alpha=0.35, label=label, rasterized=True)
    lims, outside = view_limits(series)
    ax.set_xlim(*lims[0])
    ax.set_ylim(*lims[1])
    ax.set_aspect("equal")
    ax.set_xlabel(f"x{axes[0] + 1}")
    ax.set_ylabel(f"x{axes[1] + 1}")
    if outside:
        ax.set_title(f"{outside} points outside the window", fontsize=9)
    ax.legend(markerscale=5, loc="best")
    fig.tight_layout()
    if path is not None:
        fig.savefig(path, dpi=120)
        plt.close(fig)
    return fig


def dho_figure(curves: dict[float, tuple], path=None):
    """One panel per damping ratio: prediction vs closed form."""
    xis = sorted(curves)
    fig, axs = plt.subplots(len(xis), 1, figsize=(7, 2.2 * len(xis)), sharex=True, squeeze=False)
    for ax, xi in zip(axs[:, 0], xis):
        z, pred, exact = curves[xi]
        ax.plot(z, exact, "k-", lw=1.5, label="analytic")
        ax.plot(z, pred, "r--", lw=1.2, label="PINN")
        ax.set_ylabel(f"x (xi={xi:g})")
    axs[0, 0].legend(loc="upper right")
    axs[-1, 0].set_xlabel("z")
    fig.tight_layout()
    if path is not None:
        fig.savefig(path, dpi=120)
        plt.close(fig)
    return fig

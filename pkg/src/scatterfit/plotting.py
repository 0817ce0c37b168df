"""Minimal PNG emitters for curves and 2-D intensity maps."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_curve", "plot_map"]


def _clip_positive(values):
    values = np.asarray(values, dtype=float)
    positive = values[np.isfinite(values) & (values > 0)]
    floor = positive.min() * 1e-3 if positive.size else 1e-30
    return np.clip(values, floor, None)


def plot_curve(x, y, path, xlabel="", ylabel="", title="", logy=None):
    """Line plot; switches to a log axis when the data spans decades.

    Non-positive points are clipped, never dropped, so reflectivity
    curves that touch zero still render.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    finite = y[np.isfinite(y)]
    if logy is None:
        positive = finite[finite > 0]
        logy = (positive.size > 0 and positive.max() > 1e3 * positive.min())
    fig, ax = plt.subplots(figsize=(7, 4.5))
    if logy:
        ax.semilogy(x, _clip_positive(y), lw=1.2)
    else:
        ax.plot(x, y, lw=1.2)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_map(x, y, values, path, xlabel="", ylabel="", title="", log=True):
    """Heatmap of a 2-D intensity map given flat axes and a value grid."""
    values = np.asarray(values, dtype=float)
    if log:
        values = np.log10(_clip_positive(values))
    fig, ax = plt.subplots(figsize=(6.5, 5.2))
    mesh = ax.pcolormesh(np.asarray(x), np.asarray(y), values.T,
                         shading="auto", cmap="viridis")
    fig.colorbar(mesh, ax=ax,
                 label="log10 intensity" if log else "intensity")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

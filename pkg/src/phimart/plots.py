"""Figure rendering for the report paths.

Every figure-producing subcommand writes PNGs next to its delimited output.
Matplotlib is imported lazily with the Agg backend so library use never
touches a display; metadata is stripped to keep files reproducible.
"""

from __future__ import annotations

import numpy as np


def _plt():
    import matplotlib

    matplotlib.use("Agg", force=True)
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    fig.savefig(path, dpi=130, bbox_inches="tight", metadata={"Software": "phimart"})
    _plt().close(fig)


def plot_slice(xs, ys, values, flags, path, title="value-iteration slice (z = 1)"):
    plt = _plt()
    fig, axes = plt.subplots(1, 2, figsize=(11, 4.2))
    masked = np.ma.masked_invalid(values.T)
    im = axes[0].pcolormesh(xs, ys, masked, shading="nearest", cmap="viridis")
    fig.colorbar(im, ax=axes[0], label="lower bound")
    axes[0].set_xlabel("x")
    axes[0].set_ylabel("y")
    axes[0].set_title(title)
    im2 = axes[1].pcolormesh(
        xs, ys, flags.T, shading="nearest", cmap="Set2", vmin=0, vmax=2
    )
    cbar = fig.colorbar(im2, ax=axes[1], ticks=[0, 1, 2])
    cbar.ax.set_yticklabels(["unset", "certified", "heuristic"])
    axes[1].set_xlabel("x")
    axes[1].set_ylabel("y")
    axes[1].set_title("cell status")
    _save(fig, path)


def plot_search_trace(trace, best_ratio, path):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(7, 4))
    chains = sorted({c for c, _, _ in trace})
    for c in chains:
        steps = [s for cc, s, _ in trace if cc == c]
        bests = [b for cc, _, b in trace if cc == c]
        ax.plot(steps, bests, alpha=0.6, lw=1)
    ax.axhline(best_ratio, color="k", ls="--", lw=1, label=f"best = {best_ratio:.6f}")
    ax.set_xlabel("annealing step")
    ax.set_ylabel("best ratio so far")
    ax.set_title("adversarial search")
    ax.legend()
    _save(fig, path)


def plot_gap_histogram(rel_gaps, tol_rel, path):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.hist(rel_gaps, bins=80, color="#49708a")
    ax.axvline(-tol_rel, color="r", ls="--", lw=1, label="tolerance")
    ax.set_xlabel("relative split gap")
    ax.set_ylabel("count")
    ax.set_yscale("log")
    ax.set_title("supersolution gap distribution")
    ax.legend()
    _save(fig, path)


def plot_bracket(lower, upper, dp_origin, path):
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 3.6))
    ax.barh([0], [upper - lower], left=[lower], color="#b9d2b1", height=0.4)
    ax.plot([lower], [0], "k<", markersize=10, label=f"search lower = {lower:.4f}")
    ax.plot([upper], [0], "k>", markersize=10, label=f"fitted upper = {upper:.4f}")
    if dp_origin is not None:
        ax.plot([dp_origin], [0], "b|", markersize=16, label=f"dp at origin = {dp_origin:.4f}")
    ax.set_yticks([])
    ax.set_xlabel("sharp-constant bracket")
    ax.legend(loc="upper right", fontsize=8)
    _save(fig, path)

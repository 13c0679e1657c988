"""Matplotlib figures rendered to files next to the delimited outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .core import SparseDepth
from .simulation import SimStats


def save_error_map_figure(error, mask, path, title: str = "absolute depth error") -> None:
    """Heatmap of the per-pixel |error| with invalid pixels blanked."""
    error = np.asarray(error, dtype=np.float64)
    shown = np.ma.masked_where(~np.asarray(mask, dtype=bool), error)
    fig, ax = plt.subplots(figsize=(7, 5))
    im = ax.imshow(shown, cmap="magma", interpolation="nearest")
    fig.colorbar(im, ax=ax, label="|error| (m)")
    ax.set_title(title)
    ax.set_axis_off()
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def save_sparse_depth_figure(sparse: SparseDepth, path, title: str = "sparse depth") -> None:
    """Scatter of the sparse points over the image extent, colored by depth."""
    fig, ax = plt.subplots(figsize=(7, 5))
    if len(sparse):
        sc = ax.scatter(sparse.cols, sparse.rows, c=sparse.depths, s=6, cmap="viridis")
        fig.colorbar(sc, ax=ax, label="depth (m)")
    ax.set_xlim(0, sparse.width)
    ax.set_ylim(sparse.height, 0)
    ax.set_aspect("equal")
    ax.set_title(f"{title} ({len(sparse)} points)")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def save_sim_stats_figure(stats: SimStats, path) -> None:
    """Bar chart of per-stage dropped and modified point counts."""
    names = list(stats.stages)
    dropped = [stats.stages[n].dropped for n in names]
    modified = [stats.stages[n].modified for n in names]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.bar(x - 0.2, dropped, width=0.4, label="dropped")
    ax.bar(x + 0.2, modified, width=0.4, label="modified")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=30, ha="right")
    ax.set_ylabel("points")
    ax.set_title(f"frame {stats.frame_id}: {stats.candidates} candidates "
                 f"-> {stats.output_points} points")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

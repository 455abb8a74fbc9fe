"""Matplotlib figures written next to the CSV/JSON reports."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

COLORS = {"D": "#1f77b4", "G": "#d62728"}


def setup():
    matplotlib.rc("font", family="sans-serif", size=9)
    matplotlib.rc("axes", linewidth=0.8)
    matplotlib.rc("lines", linewidth=1.2)
    matplotlib.rc("legend", fontsize=8, frameon=False)


def _smooth(y: np.ndarray, k: int) -> np.ndarray:
    if k <= 1 or len(y) < k:
        return y
    return np.convolve(y, np.ones(k) / k, mode="valid")


def loss_curves(rows: Sequence[dict], out_path, smooth: int = 20):
    """Four panels (adv, cls, rec, gp) of the loss log, D and G overlaid."""
    setup()
    fig, axes = plt.subplots(1, 4, figsize=(11, 2.6))
    for ax, key in zip(axes, ("adv", "cls", "rec", "gp")):
        for net in ("D", "G"):
            pts = [(int(r["step"]), float(r[key])) for r in rows if r["net"] == net]
            if not pts or (key == "rec" and net == "D") or (key == "gp" and net == "G"):
                continue
            x, y = np.array(pts).T
            k = max(1, min(smooth, len(y) // 10))
            ys = _smooth(y, k)
            ax.plot(x[len(x) - len(ys):], ys, color=COLORS[net], label=net)
        ax.set_title(key)
        ax.set_xlabel("step")
        ax.spines[["top", "right"]].set_visible(False)
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def translation_figure(grid: np.ndarray, n_rows: int, col_titles: Sequence[str], out_path,
                       row_titles: Sequence[str] | None = None):
    """Annotated rendering of a uint8 grid from emit_grid (column headers, optional row labels)."""
    setup()
    n_cols = len(col_titles)
    h, w = grid.shape[0] // n_rows, grid.shape[1] // n_cols
    fig, axes = plt.subplots(n_rows, n_cols, figsize=(1.1 * n_cols, 1.1 * n_rows + 0.3), squeeze=False)
    for i in range(n_rows):
        for j in range(n_cols):
            ax = axes[i][j]
            ax.imshow(grid[i * h:(i + 1) * h, j * w:(j + 1) * w], interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
            if i == 0:
                ax.set_title(col_titles[j], fontsize=7)
            if row_titles is not None and j == 0:
                ax.set_ylabel(row_titles[i], fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)


def per_domain_errors(names: Sequence[str], errors: Sequence[float], out_path, chance: float | None = None):
    setup()
    fig, ax = plt.subplots(figsize=(max(3, 0.6 * len(names) + 1), 2.6))
    ax.bar(range(len(names)), errors, color="#4c72b0")
    if chance is not None:
        ax.axhline(chance, ls="--", color="0.4", lw=0.8, label="chance")
        ax.legend()
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=7)
    ax.set_ylim(0, 1)
    ax.set_ylabel("classification error")
    ax.spines[["top", "right"]].set_visible(False)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return Path(out_path)

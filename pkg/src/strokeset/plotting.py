"""Report figures written straight to image files (non-interactive backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _draw_sketch(ax, sketch, title=None):
    for s in sketch.strokes:
        if len(s) == 1:
            ax.plot(s[:, 0], s[:, 1], "k.", ms=3)
        else:
            ax.plot(s[:, 0], s[:, 1], "k-", lw=1.2)
    ax.set_xlim(-1.05, 1.05)
    ax.set_ylim(1.05, -1.05)        # y grows downward
    ax.set_aspect("equal")
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title, fontsize=8)


def gamma_sweep(fields, gammas, path):
    """Side-by-side UDF images for one stroke at several sharpness values."""
    fig, axes = plt.subplots(1, len(gammas), figsize=(2.2 * len(gammas), 2.4), squeeze=False)
    for ax, f, g in zip(axes[0], fields, gammas):
        ax.imshow(f, cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
        ax.set_title(f"gamma = {g:g}", fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def trajectory(snapshots, timesteps, path):
    """Progressive denoising: one panel per requested timestep."""
    fig, axes = plt.subplots(1, len(snapshots), figsize=(2.2 * len(snapshots), 2.4), squeeze=False)
    for ax, gen, t in zip(axes[0], snapshots, timesteps):
        _draw_sketch(ax, gen.sketch, f"t = {t} ({len(gen.strokes)} strokes)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def loss_curves(log, columns, path, title=None):
    """Loss log rows (step, value, ...) on a log scale, one line per column after the step."""
    rows = np.asarray(log, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for j, name in enumerate(columns, start=1):
        vals = rows[:, j]
        if np.all(vals > 0):
            ax.plot(rows[:, 0], vals, label=name, lw=1)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ablation_bars(names, values, path, ylabel="reconstruction error"):
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.bar(names, values, color=["#4c72b0", "#dd8452", "#55a868", "#c44e52"][:len(names)])
    ax.set_ylabel(ylabel)
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.4g}", ha="center", va="bottom", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def sketch_grid(sketches, path, titles=None, cols=8):
    n = max(1, len(sketches))
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, min(cols, n), figsize=(1.6 * min(cols, n), 1.6 * rows), squeeze=False)
    for ax in axes.ravel():
        ax.axis("off")
    for i, sk in enumerate(sketches):
        ax = axes.ravel()[i]
        ax.axis("on")
        _draw_sketch(ax, sk, None if titles is None else titles[i])
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)

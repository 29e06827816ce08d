"""Render run figures next to the delimited outputs."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def _read_csv(path) -> dict[str, np.ndarray]:
    with open(path) as f:
        rows = list(csv.DictReader(f))
    if not rows:
        return {}
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def save_training_figures(metrics_csv, out_dir) -> list[str]:
    """Episode curves and loss traces from a training metrics file."""
    cols = _read_csv(metrics_csv)
    paths = []
    if not cols:
        cols = {k: np.zeros(0) for k in ("global_step", "return", "explored_m2",
                                         "model_recon", "model_kl_dyn", "intrinsic_sum")}
    steps = cols["global_step"]

    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    axes[0, 0].plot(steps, cols["return"], lw=0.8)
    axes[0, 0].set_ylabel("episode return")
    axes[0, 1].plot(steps, cols["explored_m2"], lw=0.8, color="tab:green")
    axes[0, 1].set_ylabel("explored m$^2$")
    axes[1, 0].plot(steps, cols["model_recon"], lw=0.8, label="reconstruction")
    axes[1, 0].plot(steps, cols["model_kl_dyn"], lw=0.8, label="dynamics KL")
    axes[1, 0].legend(fontsize=8)
    axes[1, 0].set_ylabel("model loss terms")
    axes[1, 1].plot(steps, cols["intrinsic_sum"], lw=0.8, color="tab:red")
    axes[1, 1].set_ylabel("intrinsic reward / episode")
    for ax in axes.flat:
        ax.set_xlabel("environment step")
    fig.tight_layout()
    out = os.path.join(out_dir, "training_curves.png")
    fig.savefig(out, dpi=110)
    plt.close(fig)
    paths.append(out)
    return paths


def save_trajectory_figure(spec, xs, ys, out_path, title: str | None = None) -> str:
    """Top-down map with walls and the driven path."""
    fig, ax = plt.subplots(figsize=(6, 6))
    for x1, y1, x2, y2 in spec.walls:
        ax.plot([x1, x2], [y1, y2], color="black", lw=1.5)
    for ob in spec.obstacles:
        ax.add_patch(plt.Circle((ob.x, ob.y), ob.radius, color="tab:orange", alpha=0.6))
    ax.plot(xs, ys, color="tab:blue", lw=1.0)
    ax.plot(xs[0], ys[0], "go", ms=6)
    ax.plot(xs[-1], ys[-1], "rx", ms=8)
    ax.set_xlim(-0.5, spec.width + 0.5)
    ax.set_ylim(-0.5, spec.height + 0.5)
    ax.set_aspect("equal")
    ax.set_title(title or spec.name)
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path


def save_comparison_figure(labels, series: dict, out_path, title="") -> str:
    """Grouped bars, one group per label, one bar color per metric."""
    x = np.arange(len(labels))
    n = len(series)
    width = 0.8 / max(n, 1)
    fig, ax = plt.subplots(figsize=(1.8 + 1.1 * len(labels), 4))
    for i, (name, values) in enumerate(series.items()):
        ax.bar(x + (i - (n - 1) / 2) * width, values, width, label=name)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.legend(fontsize=8)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path

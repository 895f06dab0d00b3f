"""Figure rendering for analysis reports.

Each helper takes the same data the CSV writers receive and renders a PNG
next to it.  matplotlib is imported lazily with the Agg backend so the
library works headless and stays importable without a display.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _plt():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def plot_pca_curves(curves: dict[str, tuple[np.ndarray, np.ndarray]], path: str | Path) -> Path:
    """Variance retained vs number of principal components, one line per label."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, (components, retained) in curves.items():
        ax.plot(components, retained, label=label)
    ax.set_xlabel("principal components")
    ax.set_ylabel("fraction of variance retained")
    ax.set_ylim(0, 1.02)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def plot_gate_density(series: dict[str, tuple[np.ndarray, np.ndarray]], path: str | Path) -> Path:
    """Transform-gate kernel densities, one curve per label."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, (grid, density) in series.items():
        ax.plot(grid, density, label=label)
    ax.set_xlabel("transform gate value")
    ax.set_ylabel("density")
    ax.set_xlim(-0.05, 1.05)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def plot_ttr_scatter(
    ttr: np.ndarray, delta_ppl: np.ndarray, slope: float, path: str | Path
) -> Path:
    """Perplexity gain against type-token ratio with the through-origin fit."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.scatter(ttr, delta_ppl, s=18)
    xs = np.linspace(0, max(ttr) * 1.05, 50)
    ax.plot(xs, slope * xs, lw=1, color="tab:red", label=f"fit: {slope:.0f} x TTR")
    ax.set_xlabel("type-token ratio")
    ax.set_ylabel("perplexity gain")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)


def plot_training_log(records, path: str | Path) -> Path:
    """Train/validation perplexity across epochs."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(5, 3.5))
    epochs = [r.epoch for r in records]
    ax.plot(epochs, [r.train_ppl for r in records], label="train")
    ax.plot(epochs, [r.valid_ppl for r in records], label="valid")
    ax.set_xlabel("epoch")
    ax.set_ylabel("perplexity")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return Path(path)

"""Report figures: prediction-vs-MOS scatter with the fitted logistic curve.

Figures render through the Agg backend straight to files (SVG by default),
sitting next to the CSV score table the same report emits.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

plt.rcParams["svg.hashsalt"] = "vqfusion"


def scatter_with_fit(preds, gts, fit=None, title="", out_path="scatter.svg"):
    """Scatter predicted scores against ground truth, overlay the fit."""
    preds = np.asarray(preds, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    fig, axis = plt.subplots(figsize=(4.2, 3.4))
    axis.scatter(preds, gts, s=14, alpha=0.65, edgecolors="none", label="videos")
    if fit is not None:
        grid = np.linspace(preds.min(), preds.max(), 200)
        axis.plot(grid, fit(grid), lw=1.6, color="crimson", label="logistic fit")
    axis.set_xlabel("predicted score")
    axis.set_ylabel("MOS")
    if title:
        axis.set_title(title, fontsize=10)
    axis.legend(frameon=False, fontsize=8)
    axis.spines["right"].set_visible(False)
    axis.spines["top"].set_visible(False)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, format=out_path.suffix.lstrip(".") or "svg")
    plt.close(fig)
    return out_path


def training_curve(epoch_losses, out_path="loss.svg"):
    fig, axis = plt.subplots(figsize=(4.2, 2.8))
    axis.plot(range(len(epoch_losses)), epoch_losses, lw=1.4)
    axis.set_xlabel("epoch")
    axis.set_ylabel("1 - PLCC")
    axis.spines["right"].set_visible(False)
    axis.spines["top"].set_visible(False)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, format=out_path.suffix.lstrip(".") or "svg")
    plt.close(fig)
    return out_path

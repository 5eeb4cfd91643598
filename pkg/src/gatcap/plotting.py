"""Report figures rendered to files (headless Agg backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "figure.dpi": 120,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_training_curves(epochs: Sequence[dict], path) -> Path:
    """Loss and token accuracy per epoch, from ``TrainReport.to_dict()['epochs']``."""
    with plt.rc_context(RC):
        fig, (ax_l, ax_a) = plt.subplots(1, 2, figsize=(6.4, 2.6))
        x = [e["epoch"] for e in epochs]
        ax_l.plot(x, [e["loss"] for e in epochs], marker="o", ms=3)
        ax_l.set_xlabel("epoch")
        ax_l.set_ylabel("cross-entropy")
        ax_a.plot(x, [e["token_accuracy"] for e in epochs], marker="o", ms=3, color="C1")
        ax_a.set_xlabel("epoch")
        ax_a.set_ylabel("token accuracy")
        ax_a.set_ylim(0, 1)
        fig.tight_layout()
        return _save(fig, path)


def plot_ablation(results: Dict[str, Sequence[float]], path, metric: str = "spatial accuracy") -> Path:
    """Bar per variant at the seed mean, with each seed's value overlaid as a dot."""
    names = list(results)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(names), 2.8))
        means = [float(np.mean(results[n])) for n in names]
        ax.bar(range(len(names)), means, color="0.75", edgecolor="0.3", width=0.6)
        for i, n in enumerate(names):
            vals = list(results[n])
            ax.scatter([i] * len(vals), vals, s=10, color="C0", zorder=3)
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=20, ha="right")
        ax.set_ylabel(metric)
        ax.set_ylim(0, 1 if max(means, default=0) <= 1 else None)
        fig.tight_layout()
        return _save(fig, path)


def plot_scores(per_instance: Dict[str, Sequence[float]], path) -> Path:
    """Histogram of per-instance scores, one panel per metric."""
    keys = list(per_instance)
    with plt.rc_context(RC):
        fig, axes = plt.subplots(1, len(keys), figsize=(2.2 * len(keys), 2.2), squeeze=False)
        for ax, k in zip(axes[0], keys):
            ax.hist(per_instance[k], bins=20, color="C0", alpha=0.8)
            ax.set_title(k)
        fig.tight_layout()
        return _save(fig, path)

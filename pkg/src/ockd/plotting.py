"""Figures for the ``report`` command, rendered off-screen to PNG files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

METHOD_LABELS = {"ours": "teacher/student", "dt": "teacher baseline"}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_roc(curves: dict[str, list[tuple[float, float]]], path) -> Path:
    """One ROC line per labeled curve: genuine rejected vs attacks detected."""
    fig, ax = plt.subplots(figsize=(4.5, 4.2))
    for name, pts in curves.items():
        arr = np.asarray(pts, dtype=float)
        ax.plot(arr[:, 0], arr[:, 1], label=name, lw=1.4)
    ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls="--")
    ax.set_xlabel("genuine rejection rate")
    ax.set_ylabel("attack detection rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.01)
    ax.legend(fontsize=8, loc="lower right")
    return _save(fig, Path(path))


def plot_score_histograms(scores: dict[str, np.ndarray], labels: np.ndarray, path) -> Path:
    """Side-by-side genuine/attack score histograms, one panel per method."""
    fig, axes = plt.subplots(1, len(scores), figsize=(4.2 * len(scores), 3.4), squeeze=False)
    for ax, (name, s) in zip(axes[0], scores.items()):
        bins = np.histogram_bin_edges(s, bins=30)
        ax.hist(s[labels == 0], bins=bins, alpha=0.6, label="genuine", density=True)
        ax.hist(s[labels == 1], bins=bins, alpha=0.6, label="attack", density=True)
        ax.set_title(METHOD_LABELS.get(name, name), fontsize=9)
        ax.set_xlabel("score")
        ax.legend(fontsize=8)
    return _save(fig, Path(path))


def plot_losses(traces: dict[str, np.ndarray], path, window: int = 20) -> Path:
    """Loss traces with a trailing moving average."""
    fig, ax = plt.subplots(figsize=(5.5, 3.4))
    for name, v in traces.items():
        v = np.asarray(v, dtype=float)
        if v.size == 0:
            continue
        w = max(1, min(window, v.size))
        smooth = np.convolve(v, np.ones(w) / w, mode="valid")
        ax.plot(np.arange(w, v.size + 1), smooth, label=name, lw=1.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend(fontsize=7)
    return _save(fig, Path(path))

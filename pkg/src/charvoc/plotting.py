"""Figures written next to the CSV/JSON reports."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

LOSS_COLUMNS = ("l_mel", "l_gan", "l_fm", "l_ctc", "l_gen", "l_disc")


def savefig(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def _smooth(y, width: int):
    y = np.asarray(y, dtype=float)
    if width <= 1 or y.size < width:
        return y
    kernel = np.ones(width) / width
    return np.convolve(y, kernel, mode="valid")


def plot_training_curves(rows: Sequence[dict], path, smooth: int = 20) -> Path:
    """One panel per loss component plus the learning rate."""
    steps = np.array([r["step"] for r in rows])
    columns = [c for c in LOSS_COLUMNS if rows and c in rows[0]]
    fig, axes = plt.subplots(2, 4, figsize=(14, 6), sharex=True)
    for ax, col in zip(axes.flat, columns + ["lr"]):
        y = [r[col] for r in rows]
        ys = _smooth(y, smooth if col != "lr" else 1)
        ax.plot(steps[len(steps) - len(ys):], ys, lw=1)
        ax.set_title(col)
        ax.grid(alpha=0.3)
    for ax in list(axes.flat)[len(columns) + 1:]:
        ax.axis("off")
    for ax in axes[-1]:
        ax.set_xlabel("step")
    return savefig(fig, path)


def plot_disc_warmup(rows: Sequence[dict], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot([r["step"] for r in rows], [r["l_disc"] for r in rows], lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("discriminator loss")
    ax.grid(alpha=0.3)
    return savefig(fig, path)


def plot_ablation(results: Sequence[Dict], path) -> Path:
    """Grouped bars of corpus WER per seed, conditioned vs. unconditioned."""
    seeds = [str(r["seed"]) for r in results]
    x = np.arange(len(seeds))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(x - 0.2, [100 * r["wer_unconditioned"] for r in results], 0.4, label="unconditioned")
    ax.bar(x + 0.2, [100 * r["wer_conditioned"] for r in results], 0.4, label="conditioned")
    ax.set_xticks(x, [f"seed {s}" for s in seeds])
    ax.set_ylabel("WER (%)")
    ax.legend(frameon=False)
    return savefig(fig, path)


def plot_eval_report(rows: Sequence[dict], path) -> Path:
    """Histogram of per-utterance word errors."""
    errors = [r["errors"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    bins = np.arange(0, (max(errors) if errors else 0) + 2) - 0.5
    ax.hist(errors, bins=bins, rwidth=0.8)
    ax.set_xlabel("word errors per utterance")
    ax.set_ylabel("utterances")
    return savefig(fig, path)

"""Report figures.  Uses the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
_FIGSIZE = (5.0, 3.2)


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    # no Software/date metadata, so reruns give identical files
    fig.savefig(path, dpi=120, bbox_inches="tight", metadata={"Software": None})
    plt.close(fig)
    return path


def loss_curve(losses: Sequence[float], path: str | Path, dev_mrr: Sequence[float] = ()) -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=_FIGSIZE)
        epochs = np.arange(1, len(losses) + 1)
        ax.plot(epochs, losses, color="C0", marker="o", ms=2, lw=1, label="train loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean cross-entropy")
        if len(dev_mrr):
            ax2 = ax.twinx()
            ax2.plot(epochs[: len(dev_mrr)], dev_mrr, color="C1", lw=1, label="dev MRR")
            ax2.set_ylabel("dev MRR")
            ax2.set_ylim(0, 1.02)
        ax.set_title("training")
        return _save(fig, path)


def rank_histogram(ranks: Sequence[int], path: str | Path, n_candidates: int | None = None,
                   title: str = "rank of the positive snippet") -> Path:
    ranks = np.asarray(ranks, dtype=int)
    top = int(n_candidates or (ranks.max() if ranks.size else 1))
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=_FIGSIZE)
        counts = np.bincount(ranks, minlength=top + 1)[1:]
        ax.bar(np.arange(1, top + 1), counts, width=0.8, color="C0")
        ax.set_xlabel("rank")
        ax.set_ylabel("cases")
        ax.set_xlim(0.4, top + 0.6)
        ax.set_title(title)
        return _save(fig, path)


def perfect_sets_chart(report: dict, path: str | Path) -> Path:
    """Bars for each model's top-1 set and every intersection."""
    labels = list(report["sizes"]) + list(report["intersections"])
    values = list(report["sizes"].values()) + list(report["intersections"].values())
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(max(_FIGSIZE[0], 0.8 * len(labels) + 1), _FIGSIZE[1]))
        colors = ["C0"] * len(report["sizes"]) + ["C2"] * len(report["intersections"])
        ax.bar(range(len(values)), values, color=colors)
        ax.set_xticks(range(len(values)))
        ax.set_xticklabels(labels, rotation=30, ha="right")
        ax.set_ylabel("cases ranked first")
        ax.set_title(f"perfect rankings over {report['n_cases']} cases")
        return _save(fig, path)


def token_histograms(nl_counts: Sequence[int], code_counts: Sequence[int], path: str | Path) -> Path:
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, 2, figsize=(2 * _FIGSIZE[0], _FIGSIZE[1]))
        for ax, counts, label in zip(axes, (nl_counts, code_counts), ("description", "code")):
            ax.hist(counts, bins=min(30, max(1, len(set(counts)))), color="C0")
            ax.set_xlabel(f"tokens in {label}")
            ax.set_ylabel("pairs")
        return _save(fig, path)

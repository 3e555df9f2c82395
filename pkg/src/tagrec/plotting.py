"""Figures written next to the delimited reports (Agg backend, no display)."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (4.8, 3.2),
    "figure.dpi": 100,
    "savefig.bbox": "tight",
}

# no Software/date chunks, so identical figures give identical bytes
_PNG_METADATA = {"Software": None}


def _save(fig, path: str | Path) -> None:
    fig.savefig(path, format="png", metadata=_PNG_METADATA)
    plt.close(fig)


def plot_recall_curves(rows: Mapping[str, Mapping[int, float]], ks: Sequence[int], path: str | Path) -> None:
    """One line per model: mean Recall@K against K."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for name, recalls in rows.items():
            ax.plot(list(ks), [recalls[k] for k in ks], marker="o", label=name)
        ax.set_xlabel("K")
        ax.set_ylabel("Recall@K")
        ax.set_xticks(list(ks))
        ax.grid(alpha=0.3)
        ax.legend(frameon=False)
        _save(fig, path)


def plot_training_log(losses: Sequence[float], path: str | Path, title: str, ylabel: str = "loss") -> None:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(range(1, len(losses) + 1), losses, color="tab:blue")
        ax.set_xlabel("epoch")
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.grid(alpha=0.3)
        _save(fig, path)

"""SVG learning curves from metrics CSV files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .runner import read_metrics  # noqa: E402


def plot_learning_curves(metric_files, out_path, labels=None) -> None:
    """One panel of ``eval_return`` against ``step``, one line per file."""
    metric_files = [Path(p) for p in metric_files]
    labels = labels or [p.parent.name or p.stem for p in metric_files]
    fig, ax = plt.subplots(figsize=(6, 4))
    for path, label in zip(metric_files, labels):
        rows = [r for r in read_metrics(path) if r["eval_return"] is not None]
        ax.plot([r["step"] for r in rows], [r["eval_return"] for r in rows], marker="o", ms=3, label=label)
    ax.set_xlabel("environment step")
    ax.set_ylabel("evaluation return")
    ax.grid(alpha=0.3)
    if len(metric_files) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)

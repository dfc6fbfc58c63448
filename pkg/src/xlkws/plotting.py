"""Figure rendering for the report path.

Figures are written to files next to the delimited output; nothing is
shown interactively.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_pr_curve(pr_points, path, title="Pooled precision-recall"):
    """PR curve from (threshold, precision, recall) points."""
    recalls = [0.0] + [r for _, _, r in pr_points]
    precisions = [pr_points[0][1] if pr_points else 1.0] + [p for _, p, _ in pr_points]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.step(recalls, precisions, where="post")
    ax.set_xlabel("Recall")
    ax.set_ylabel("Precision")
    ax.set_xlim(0.0, 1.0)
    ax.set_ylim(0.0, 1.05)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_history_curve(history, path, title="Training"):
    epochs = np.arange(1, len(history.train_loss) + 1)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(epochs, history.train_loss, label="train loss")
    ax.plot(epochs, history.dev_loss, label="dev loss")
    if history.best_epoch >= 0:
        ax.axvline(history.best_epoch + 1, color="grey", ls="--", lw=1,
                   label="best epoch")
    ax.set_xlabel("Epoch")
    ax.set_ylabel("Mean summed cross-entropy")
    ax.set_title(title)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_report_chart(rows, path, title="Keyword spotting comparison"):
    """Grouped bar chart over models; rows are dicts with scorer name and
    the four aggregate metrics."""
    metrics = ["macro_p_at_10", "macro_p_at_n", "macro_eer", "pooled_ap"]
    labels = ["P@10", "P@N", "EER", "AP"]
    names = [r["scorer"] for r in rows]
    x = np.arange(len(metrics))
    width = 0.8 / max(len(rows), 1)
    fig, ax = plt.subplots(figsize=(7, 4))
    for i, row in enumerate(rows):
        values = [row[m] for m in metrics]
        ax.bar(x + i * width, values, width, label=names[i])
    ax.set_xticks(x + width * (len(rows) - 1) / 2)
    ax.set_xticklabels(labels)
    ax.set_ylim(0.0, 1.05)
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

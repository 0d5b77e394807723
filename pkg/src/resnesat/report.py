"""Run artifacts: delimited metric tables, text summaries, and figures.

Every rendering here is a plain file (CSV, UTF-8 text, PNG); figures are
drawn headless and saved next to the delimited output they illustrate.
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .metrics import METRIC_NAMES, ConfusionMatrix, MetricsReport

CSV_HEADER = ["fold"] + list(METRIC_NAMES)


def _cell(value) -> str:
    return "undefined" if value is None else f"{value:.6f}"


def write_metrics_csv(path, fold_reports, aggregate, micro: MetricsReport | None = None) -> None:
    """Per-fold rows plus mean/stddev (macro) and optional pooled micro row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for i, report in enumerate(fold_reports):
            writer.writerow([i] + [_cell(v) for v in report.values().values()])
        writer.writerow(["mean"] + [_cell(aggregate[m]["mean"]) for m in METRIC_NAMES])
        writer.writerow(["stddev"] + [_cell(aggregate[m]["std"]) for m in METRIC_NAMES])
        if micro is not None:
            writer.writerow(["micro"] + [_cell(v) for v in micro.values().values()])


def write_epoch_log_csv(path, logs_by_fold: dict) -> None:
    """fold,epoch,lr,mean_loss,train_accuracy rows for every trained fold."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "epoch", "lr", "mean_loss", "train_accuracy"])
        for fold in sorted(logs_by_fold):
            for entry in logs_by_fold[fold]:
                writer.writerow([fold, entry.epoch, f"{entry.lr:.10g}",
                                 f"{entry.mean_loss:.6f}", f"{entry.train_accuracy:.6f}"])


def write_summary_text(path, task: str, positive_name: str, variant: str,
                       aggregate, fold_reports, micro: MetricsReport | None = None) -> None:
    """Human-readable table: one model-variant row of the five scores."""
    header = f"{'':14s}" + "".join(f"{h:>13s}" for h in
                                   ("Recall", "Specificity", "Precision", "F1-score", "Accuracy"))
    lines = [
        f"Task: {task} (positive class: {positive_name})",
        f"Folds: {len(fold_reports)}; metrics are unweighted fold means.",
        "",
        header,
        f"{variant:14s}" + "".join(
            f"{_fmt(aggregate[m]['mean']):>13s}" for m in METRIC_NAMES),
        f"{'  (stddev)':14s}" + "".join(
            f"{_fmt(aggregate[m]['std']):>13s}" for m in METRIC_NAMES),
    ]
    if micro is not None:
        lines.append(f"{'  (micro)':14s}" + "".join(
            f"{_fmt(v):>13s}" for v in micro.values().values()))
    lines.append("")
    lines.append("Per-fold:")
    for i, report in enumerate(fold_reports):
        lines.append(f"  fold {i:2d}    " + "".join(
            f"{_fmt(v):>13s}" for v in report.values().values()))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _fmt(value) -> str:
    return "undefined" if value is None else f"{value:.4f}"


def write_resolved_config(path, resolved: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(resolved):
            fh.write(f"{key}={resolved[key]}\n")


def plot_fold_metrics(path, fold_reports) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    folds = np.arange(len(fold_reports))
    for name in METRIC_NAMES:
        values = [getattr(r, name) for r in fold_reports]
        ax.plot(folds, [np.nan if v is None else v for v in values],
                marker="o", label=name)
    ax.set_xlabel("fold")
    ax.set_ylabel("score")
    ax.set_ylim(0, 1.05)
    ax.set_xticks(folds)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)


def plot_training_curves(path, logs_by_fold: dict) -> None:
    fig, (ax_loss, ax_lr) = plt.subplots(1, 2, figsize=(9, 3.5))
    for fold in sorted(logs_by_fold):
        logs = logs_by_fold[fold]
        epochs = [l.epoch for l in logs]
        ax_loss.plot(epochs, [l.mean_loss for l in logs], alpha=0.7,
                     label=f"fold {fold}" if len(logs_by_fold) <= 10 else None)
        ax_lr.plot(epochs, [l.lr for l in logs], alpha=0.7)
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("mean training loss")
    ax_loss.grid(alpha=0.3)
    if len(logs_by_fold) > 1 and len(logs_by_fold) <= 10:
        ax_loss.legend(fontsize=7)
    ax_lr.set_xlabel("epoch")
    ax_lr.set_ylabel("learning rate")
    ax_lr.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)


def plot_confusion(path, cm: ConfusionMatrix) -> None:
    counts = np.array([[cm.tn, cm.fp], [cm.fn, cm.tp]], dtype=float)
    fig, ax = plt.subplots(figsize=(4, 3.5))
    im = ax.imshow(counts, cmap="Blues")
    fig.colorbar(im, ax=ax)
    ax.set_xticks([0, 1], ["pred neg", "pred pos"])
    ax.set_yticks([0, 1], ["true neg", "true pos"])
    for i in range(2):
        for j in range(2):
            ax.text(j, i, int(counts[i, j]), ha="center", va="center",
                    color="white" if counts[i, j] > counts.max() / 2 else "black")
    ax.set_title(f"positive: {cm.positive_name}", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=140)
    plt.close(fig)

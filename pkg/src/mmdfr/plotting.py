"""Figures for reports, written straight to files with the Agg backend."""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

FIGSIZE = (4.5, 3.6)
DPI = 120


def _finish(fig, ax, path, title=None):
    if title:
        ax.set_title(title, fontsize=10)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def plot_roc(curves, path, title="ROC"):
    """``curves`` maps a label to (fpr, tpr)."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for label, (fpr, tpr) in curves.items():
        ax.plot(fpr, tpr, lw=1.4, label=label)
    ax.plot([0, 1], [0, 1], color="0.6", lw=0.8, ls="--")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.01)
    if len(curves) > 1:
        ax.legend(fontsize=8, loc="lower right")
    return _finish(fig, ax, path, title)


def plot_cms(curves, path, title="CMS"):
    """``curves`` maps a label to rank-k rates for k = 1..K."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for label, cms in curves.items():
        ax.plot(range(1, len(cms) + 1), cms, marker=".", lw=1.4, label=label)
    ax.set_xlabel("rank")
    ax.set_ylabel("identification rate")
    ax.set_ylim(0, 1.01)
    if len(curves) > 1:
        ax.legend(fontsize=8, loc="lower right")
    return _finish(fig, ax, path, title)


def plot_distribution(counts, path, title="images per subject"):
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(range(1, len(counts) + 1), counts, lw=1.2)
    ax.set_xlabel("subject (sorted by count)")
    ax.set_ylabel("images")
    return _finish(fig, ax, path, title)


def plot_bars(values, path, ylabel="accuracy", title=None):
    """Labelled bar chart, e.g. one bar per network variant."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    labels = list(values)
    ax.bar(range(len(labels)), [values[k] for k in labels], color="0.45")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel(ylabel)
    return _finish(fig, ax, path, title)


def plot_report(report, path):
    if report.kind == "verification":
        return plot_roc({"": (report.roc_fpr, report.roc_tpr)}, path,
                        title=f"accuracy {report.mean_accuracy:.4f}")
    return plot_cms({"": report.cms}, path, title=f"rank-1 {report.rank1:.4f}")

"""Report figures rendered to image files with the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaloracle import RankReport  # noqa: E402
from .partition import PartitionStats  # noqa: E402

_COLORS = plt.rcParams["axes.prop_cycle"].by_key()["color"]


def _color(k: int) -> str:
    return _COLORS[k % len(_COLORS)]


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_metric_histograms(stats: PartitionStats, path: str | Path, metrics: Sequence[str] = ("flops", "params")):
    """One panel per metric with a step histogram for each supernet."""
    metrics = [m for m in metrics if any(r[1] == m for r in stats.histograms)]
    fig, axes = plt.subplots(1, len(metrics), figsize=(5 * len(metrics), 3.6), squeeze=False)
    for ax, metric in zip(axes[0], metrics):
        rows = [r for r in stats.histograms if r[1] == metric]
        for k in sorted({r[0] for r in rows}):
            rk = [r for r in rows if r[0] == k]
            edges = [r[2] for r in rk] + [rk[-1][3]]
            ax.stairs([r[4] for r in rk], edges, label=f"supernet {k}", color=_color(k))
        ax.set_xlabel(metric)
        ax.set_ylabel("subnets")
        ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_accuracy_distributions(stats: PartitionStats, path: str | Path):
    """Accuracy histograms per supernet with dashed median markers."""
    pairs = stats.values.get("accuracy")
    if not pairs:
        raise ValueError("partition stats carry no accuracy values; pass an oracle table")
    fig, ax = plt.subplots(figsize=(6, 3.6))
    allv = np.array([v for _, v in pairs])
    edges = np.histogram_bin_edges(allv, bins=30)
    for k in sorted({k for k, _ in pairs}):
        vk = np.array([v for kk, v in pairs if kk == k])
        ax.hist(vk, bins=edges, histtype="step", color=_color(k), label=f"supernet {k} (n={vk.size})")
        ax.axvline(float(np.median(vk)), color=_color(k), ls="--", lw=1)
    ax.set_xlabel("oracle accuracy (%)")
    ax.set_ylabel("subnets")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_rank_scatter(report: RankReport, path: str | Path, title: str | None = None):
    """Estimated vs oracle accuracy, coloured by supernet."""
    fig, ax = plt.subplots(figsize=(4.5, 4.2))
    data = np.array([(o, e, k) for _, o, e, k in report.scatter])
    for k in sorted(set(data[:, 2].astype(int))):
        m = data[:, 2] == k
        ax.scatter(data[m, 0], data[m, 1], s=8, color=_color(k), label=f"supernet {k}")
    ax.set_xlabel("oracle accuracy (%)")
    ax.set_ylabel("estimated accuracy (%)")
    ax.set_title(title or f"tau={report.tau_all:.3f} (n={report.n})")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_training_curves(epoch_log: Sequence[dict], path: str | Path):
    """Mean training loss per supernet by epoch."""
    fig, ax = plt.subplots(figsize=(5, 3.4))
    if epoch_log:
        epochs = [row["epoch"] for row in epoch_log]
        keys = sorted(k for k in epoch_log[0] if k.startswith("loss_k"))
        for key in keys:
            k = int(key[len("loss_k"):])
            ax.plot(epochs, [row[key] for row in epoch_log], marker=".", color=_color(k), label=f"supernet {k}")
        ax.legend(fontsize=8)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    fig.tight_layout()
    return _save(fig, path)

"""Matplotlib renderings written next to the delimited report outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .trainer import MetricReport


def save_loss_curve(path: str | Path, losses: Sequence[float]) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(range(len(losses)), losses, lw=1.0, color="tab:blue")
    ax.set_xlabel("step")
    ax.set_ylabel("masked next-token loss")
    ax.set_title("training loss")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metric_bars(path: str | Path, report: MetricReport) -> None:
    fig, (ax_acc, ax_mae) = plt.subplots(1, 2, figsize=(9, 4))
    acc_names = ["team", "type", "success"]
    acc_vals = [report.acc_team, report.acc_type, report.acc_success]
    ax_acc.bar(acc_names, acc_vals, color="tab:green")
    ax_acc.set_ylim(0, 1)
    ax_acc.set_ylabel("accuracy")
    for i, v in enumerate(acc_vals):
        ax_acc.text(i, v + 0.02, f"{v:.2f}", ha="center", fontsize=9)
    mae_names = ["x (m)", "y (m)", "dt (s)", "rOBV"]
    mae_vals = [report.mae_x, report.mae_y, report.mae_delta, report.mae_robv]
    ax_mae.bar(mae_names, mae_vals, color="tab:orange")
    ax_mae.set_ylabel("mean absolute error")
    fig.suptitle(f"next-event metrics over {report.n_events_evaluated} events")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_robv_histogram(path: str | Path, samples_by_label: Mapping[str, Sequence[float]]) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, samples in samples_by_label.items():
        if len(samples) == 0:
            continue
        ax.hist(samples, bins=40, alpha=0.55, label=f"{label} (n={len(samples)})")
    ax.set_xlabel("sampled residual on-ball value")
    ax.set_ylabel("count")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_embedding_map(
    path: str | Path,
    coords: Sequence[tuple[str, float, float]],
    labels: Mapping[str, str] | None = None,
) -> None:
    fig, ax = plt.subplots(figsize=(7, 6))
    if labels:
        groups: dict[str, list[tuple[float, float]]] = {}
        for pid, u, v in coords:
            groups.setdefault(labels.get(pid, "unlabeled"), []).append((u, v))
        for name in sorted(groups):
            xs = [p[0] for p in groups[name]]
            ys = [p[1] for p in groups[name]]
            ax.scatter(xs, ys, s=22, alpha=0.8, label=name)
        ax.legend(fontsize=8)
    else:
        ax.scatter([c[1] for c in coords], [c[2] for c in coords], s=22, alpha=0.8)
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    ax.set_title("player embedding map")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

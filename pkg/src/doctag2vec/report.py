"""Evaluation output: the metrics JSON, delimited tables, and matplotlib
figures rendered to files."""

from __future__ import annotations

import csv
import json
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import MetricsReport, SweepPoint


def write_metrics_json(report: MetricsReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.as_dict(), fh, indent=2)
        fh.write("\n")


def write_metrics_csv(report: MetricsReport, path) -> None:
    """Per-k precision table plus the scalar metrics, one row per key."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "k", "value"])
        for k, value in sorted(report.precision_at.items()):
            writer.writerow(["precision", k, f"{value:.6f}"])
        writer.writerow(["overall_recall", report.recall_k, f"{report.overall_recall:.6f}"])
        writer.writerow(["tag_coverage", "", f"{report.tag_coverage:.6f}"])
        writer.writerow(["n_test", "", report.n_test])


def write_sweep_csv(points: Sequence[SweepPoint], path) -> None:
    if not points:
        raise ValueError("no sweep points to write")
    ks = sorted(points[0].precision_at)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["learners", "k_prime"] + [f"precision@{k}" for k in ks] + ["overall_recall"])
        for p in points:
            writer.writerow(
                [p.learners, p.k_prime]
                + [f"{p.precision_at[k]:.6f}" for k in ks]
                + [f"{p.overall_recall:.6f}"]
            )


def plot_precision_at_k(report: MetricsReport, path, title: str = "Precision@k") -> None:
    ks = sorted(report.precision_at)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ks, [report.precision_at[k] for k in ks], marker="o")
    ax.set_xlabel("k")
    ax.set_ylabel("precision@k")
    ax.set_title(title)
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_sweep(points: Sequence[SweepPoint], path, metric_k: int = 1) -> None:
    """precision@metric_k against the number of learners, one line per
    k_prime value."""
    if not points:
        raise ValueError("no sweep points to plot")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for k_prime in sorted({p.k_prime for p in points}):
        series = sorted(
            (p.learners, p.precision_at[metric_k]) for p in points if p.k_prime == k_prime
        )
        ax.plot(
            [b for b, _ in series],
            [v for _, v in series],
            marker="o",
            label=f"k'={k_prime}",
        )
    ax.set_xlabel("learners")
    ax.set_ylabel(f"precision@{metric_k}")
    ax.set_ylim(0.0, 1.05)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)

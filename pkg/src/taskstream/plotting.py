"""Static figures: Pareto fronts, regret curves, forward transfer, transfer matrices.

Every plot function returns the data it drew so tests (and the report
command) can verify figures against the analysis library directly.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .analysis import ParetoPoint, TransferMatrix, pareto_front
from .errors import DataError


def plot_pareto(
    points_by_run: Mapping[str, Sequence[ParetoPoint]], out_path: Path
) -> dict[str, list[ParetoPoint]]:
    """Error-vs-compute scatter per run label, fronts highlighted; log flops axis."""
    if not points_by_run:
        raise DataError("pareto plot needs at least one summary")
    fig, ax = plt.subplots(figsize=(7, 5))
    fronts = {}
    for label, points in sorted(points_by_run.items()):
        points = list(points)
        front = pareto_front(points)
        fronts[label] = front
        ax.scatter([p.flops for p in points], [p.error for p in points], label=label, alpha=0.5)
        ax.plot([p.flops for p in front], [p.error for p in front], marker="o")
    ax.set_xscale("log")
    ax.set_xlabel("cumulative FLOPs")
    ax.set_ylabel("average error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return fronts


def plot_regret(
    curves: Mapping[str, np.ndarray], out_path: Path
) -> dict[str, np.ndarray]:
    if not curves:
        raise DataError("regret plot needs at least one curve")
    fig, ax = plt.subplots(figsize=(7, 4))
    for label, curve in sorted(curves.items()):
        ax.plot(range(1, len(curve) + 1), curve, label=label)
    ax.axhline(0.0, color="gray", linewidth=0.8)
    ax.set_xlabel("task position")
    ax.set_ylabel("cumulative error vs reference")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return dict(curves)


def plot_fwt(
    fwt_by_strategy: Mapping[str, Mapping[str, float]], out_path: Path
) -> dict[str, dict[str, float]]:
    if not fwt_by_strategy:
        raise DataError("forward-transfer plot needs at least one run")
    task_names = sorted({name for fwt in fwt_by_strategy.values() for name in fwt})
    fig, ax = plt.subplots(figsize=(max(6, len(task_names) * 1.2), 4))
    width = 0.8 / max(1, len(fwt_by_strategy))
    for offset, (label, fwt) in enumerate(sorted(fwt_by_strategy.items())):
        xs = [i + offset * width for i in range(len(task_names))]
        ys = [fwt.get(name, float("nan")) for name in task_names]
        ax.bar(xs, ys, width=width, label=label)
    ax.set_xticks(range(len(task_names)))
    ax.set_xticklabels(task_names, rotation=30, ha="right")
    ax.axhline(0.0, color="gray", linewidth=0.8)
    ax.set_ylabel("forward transfer")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return {k: dict(v) for k, v in fwt_by_strategy.items()}


def plot_transfer(matrix: TransferMatrix, out_path: Path) -> np.ndarray:
    """Upper-triangular heatmap of finetune-vs-scratch deltas."""
    k = len(matrix.task_ids)
    grid = np.full((k, k), np.nan)
    for (i, j), value in matrix.entries.items():
        grid[i, j] = value
    fig, ax = plt.subplots(figsize=(1.2 * k + 2, 1.0 * k + 1))
    bound = max(abs(np.nanmin(grid)), abs(np.nanmax(grid)), 1e-6)
    im = ax.imshow(grid, cmap="RdBu", vmin=-bound, vmax=bound)
    ax.set_xticks(range(k))
    ax.set_xticklabels(matrix.task_ids, rotation=45, ha="right")
    ax.set_yticks(range(k))
    ax.set_yticklabels(matrix.task_ids)
    ax.set_xlabel("finetuned task j")
    ax.set_ylabel("source task i")
    fig.colorbar(im, ax=ax, label="scratch error - finetuned error")
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return grid

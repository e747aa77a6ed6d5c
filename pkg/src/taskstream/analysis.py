"""Stream-level analysis: aggregates, Pareto fronts, regret, forward transfer,
transfer matrices, and the domain/size/resolution slicing used in reports.

Everything here is a pure function over immutable record sets, except
``transfer_matrix`` which runs its own training jobs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .errors import TrainingError
from .hpo import best_trial, build_space, random_search
from .metalearner import Budgets, config_for_trial
from .predictor.config import PredictorConfig
from .predictor.metrics import evaluate
from .predictor.state import PredictorState
from .predictor.training import TrainReport, train
from .protocol import RunRecord
from .streams import Stream, Task


# ---------------------------------------------------------------------------
# Aggregation and slicing
# ---------------------------------------------------------------------------


def aggregate(
    records: Sequence[RunRecord],
    predicate: Callable[[RunRecord], bool] | None = None,
) -> tuple[float, int]:
    """(mean error, summed FLOPs) over the records passing the predicate."""
    selected = [r for r in records if predicate is None or predicate(r)]
    if not selected:
        raise DataError("aggregate: no records match the filter")
    mean_error = sum(r.error for r in selected) / len(selected)
    total_flops = sum(r.flops for r in selected)
    return mean_error, total_flops


SIZE_BUCKETS = ("<1k", "1k-10k", "10k-100k", ">=100k")
RESOLUTION_BUCKETS = ("<64", "64-128", "128-256", ">=256")


def size_bucket(train_size: int) -> str:
    """Left-closed buckets: a task of exactly 1000 examples lands in 1k-10k."""
    if train_size < 1_000:
        return SIZE_BUCKETS[0]
    if train_size < 10_000:
        return SIZE_BUCKETS[1]
    if train_size < 100_000:
        return SIZE_BUCKETS[2]
    return SIZE_BUCKETS[3]


def resolution_bucket(avg_resolution: Sequence[int]) -> str:
    side = min(int(avg_resolution[0]), int(avg_resolution[1]))
    if side < 64:
        return RESOLUTION_BUCKETS[0]
    if side < 128:
        return RESOLUTION_BUCKETS[1]
    if side < 256:
        return RESOLUTION_BUCKETS[2]
    return RESOLUTION_BUCKETS[3]


def record_slice_key(record: RunRecord, slice_name: str) -> str:
    meta = record.task_meta
    if slice_name == "domain":
        return str(meta.get("domain", "unknown"))
    if slice_name == "size":
        return size_bucket(int(meta.get("train_size", 0)))
    if slice_name == "resolution":
        return resolution_bucket(meta.get("avg_resolution", (0, 0)))
    raise ConfigError(f"unknown slice {slice_name!r}")


def sliced_aggregates(
    records: Sequence[RunRecord], slice_name: str
) -> dict[str, tuple[float, int, int]]:
    """Per-slice (mean error, FLOPs, count), keys in first-seen order."""
    groups: dict[str, list[RunRecord]] = {}
    for record in records:
        groups.setdefault(record_slice_key(record, slice_name), []).append(record)
    out = {}
    for key, group in groups.items():
        error, flops = aggregate(group)
        out[key] = (error, flops, len(group))
    return out


# ---------------------------------------------------------------------------
# Regret curves
# ---------------------------------------------------------------------------


def regret_curve(
    records: Sequence[RunRecord], reference: Sequence[RunRecord]
) -> np.ndarray:
    """Cumulative error difference against a reference run on the same tasks."""
    if [r.task_id for r in records] != [r.task_id for r in reference]:
        raise DataError("regret_curve: task sequences differ between the two runs")
    deltas = np.array([a.error - b.error for a, b in zip(records, reference)])
    return np.cumsum(deltas)


# ---------------------------------------------------------------------------
# Forward transfer
# ---------------------------------------------------------------------------

Curve = Sequence[tuple[int, float]]


def curve_auc(curve: Curve) -> float:
    """Trapezoidal AUC of (step, accuracy) points on a [0, 1]-normalized axis."""
    if not curve:
        raise DataError("cannot integrate an empty learning curve")
    steps = np.asarray([s for s, _ in curve], dtype=np.float64)
    values = np.asarray([v for _, v in curve], dtype=np.float64)
    if len(curve) == 1:
        return float(values[0])
    span = steps[-1] - steps[0]
    if span <= 0:
        raise DataError("learning-curve steps must be strictly increasing")
    axis = (steps - steps[0]) / span
    return float(np.trapezoid(values, axis))


def forward_transfer(curve1: Curve, curve2: Curve) -> float:
    """(AUC2 - AUC1) / (1 - AUC1); <= 1, positive when the rerun learns faster."""
    auc1 = curve_auc(curve1)
    auc2 = curve_auc(curve2)
    if auc1 >= 1.0:
        raise DataError("forward transfer undefined: first-run AUC is 1")
    return (auc2 - auc1) / (1.0 - auc1)


def fwt_by_task(records: Sequence[RunRecord]) -> dict[str, float]:
    """Forward transfer for every task name appearing at least twice.

    A repeated task is detected by name equality across distinct task ids;
    the metric compares the learning curves of the first two occurrences.
    Undefined cases (first-run AUC of 1) are reported as NaN.
    """
    by_name: dict[str, list[RunRecord]] = {}
    for record in sorted(records, key=lambda r: r.task_index):
        by_name.setdefault(record.task_meta.get("name", record.task_id), []).append(record)
    out = {}
    for name, occurrences in by_name.items():
        if len(occurrences) < 2:
            continue
        first, second = occurrences[0], occurrences[1]
        try:
            out[name] = forward_transfer(first.learning_curve, second.learning_curve)
        except DataError:
            out[name] = float("nan")
    return out


# ---------------------------------------------------------------------------
# Pareto fronts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParetoPoint:
    label: str
    error: float
    flops: int

    def validate(self) -> None:
        if not 0.0 <= self.error <= 1.0:
            raise DataError(f"pareto point {self.label}: error outside [0, 1]")
        if self.flops < 0:
            raise DataError(f"pareto point {self.label}: negative flops")


def dominates(a: ParetoPoint, b: ParetoPoint) -> bool:
    """a dominates b when it is no worse in both coordinates and better in one."""
    return (
        a.flops <= b.flops
        and a.error <= b.error
        and (a.flops < b.flops or a.error < b.error)
    )


def pareto_front(points: Sequence[ParetoPoint]) -> list[ParetoPoint]:
    """Non-dominated subset, duplicates collapsed, sorted by flops ascending."""
    if not points:
        raise DataError("pareto_front needs at least one point")
    for p in points:
        p.validate()
    deduped: dict[tuple[int, float], ParetoPoint] = {}
    for p in sorted(points, key=lambda p: (p.flops, p.error, p.label)):
        deduped.setdefault((p.flops, p.error), p)
    unique = list(deduped.values())
    front = [
        p for p in unique if not any(dominates(q, p) for q in unique if q is not p)
    ]
    return sorted(front, key=lambda p: (p.flops, p.error, p.label))


def nearest_flops_match(
    candidates: Sequence[ParetoPoint], reference_flops: int
) -> ParetoPoint:
    """The candidate whose compute is closest to the reference budget."""
    if not candidates:
        raise DataError("no candidate runs to match against")
    return min(candidates, key=lambda p: (abs(p.flops - reference_flops), p.label))


# ---------------------------------------------------------------------------
# Transfer matrix
# ---------------------------------------------------------------------------


@dataclass
class TransferMatrix:
    """Strictly upper-triangular finetune-vs-scratch error deltas.

    Entry (i, j) for i < j is the scratch test error on task j minus the test
    error after initializing task j from task i's best independent run, so
    positive entries mean transfer helped.
    """

    task_ids: tuple[str, ...]
    entries: dict[tuple[int, int], float]
    reference_errors: tuple[float, ...]
    num_training_runs: int

    def entry(self, i: int, j: int) -> float:
        if not 0 <= i < j < len(self.task_ids):
            raise DataError(f"transfer matrix entry ({i}, {j}) is outside the upper triangle")
        return self.entries[(i, j)]

    def to_json(self) -> dict[str, Any]:
        return {
            "task_ids": list(self.task_ids),
            "entries": [[i, j, v] for (i, j), v in sorted(self.entries.items())],
            "reference_errors": list(self.reference_errors),
            "num_training_runs": self.num_training_runs,
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "TransferMatrix":
        return cls(
            task_ids=tuple(data["task_ids"]),
            entries={(int(i), int(j)): float(v) for i, j, v in data["entries"]},
            reference_errors=tuple(float(v) for v in data["reference_errors"]),
            num_training_runs=int(data["num_training_runs"]),
        )


def _search_and_train(
    task: Task,
    init: PredictorState | None,
    budgets: Budgets,
    base_config: PredictorConfig,
    seed: int,
) -> TrainReport:
    space = build_space(budgets.space)
    reports: list[TrainReport | None] = []

    def objective(hparams):
        config = config_for_trial(
            base_config,
            hparams,
            task,
            seed=seed + len(reports),
            num_updates=budgets.num_updates,
        )
        try:
            report = train(task, config, init)
        except TrainingError:
            reports.append(None)
            raise
        reports.append(report)
        return report.val_error, report.flops

    trials = random_search(space, budgets.n_trials, objective, seed)
    succeeded = [t for t in trials if reports[t.index] is not None]
    if not succeeded:
        raise TrainingError(f"all trials failed while training task {task.id}")
    chosen = best_trial(succeeded)
    return reports[chosen.index]


def transfer_matrix(
    stream: Stream,
    budgets: Budgets,
    base_config: PredictorConfig,
    seed: int = 0,
) -> TransferMatrix:
    """Reference pass plus all-pairs finetunes: K + K(K-1)/2 training runs."""
    tasks = stream.tasks
    k = len(tasks)
    runs = 0

    reference: list[TrainReport] = []
    ref_test_errors: list[float] = []
    for i, task in enumerate(tasks):
        report = _search_and_train(task, None, budgets, base_config, seed + 1000 * i)
        runs += 1
        reference.append(report)
        ref_test_errors.append(
            evaluate(
                report.final_state,
                task.test,
                task.kind,
                task.id,
                _eval_config(report.final_state),
            )
        )

    entries: dict[tuple[int, int], float] = {}
    for i in range(k):
        for j in range(i + 1, k):
            report = _search_and_train(
                tasks[j],
                reference[i].final_state,
                budgets,
                base_config,
                seed + 1000 * (k + i) + j,
            )
            runs += 1
            ft_error = evaluate(
                report.final_state,
                tasks[j].test,
                tasks[j].kind,
                tasks[j].id,
                _eval_config(report.final_state),
            )
            entries[(i, j)] = ref_test_errors[j] - ft_error

    return TransferMatrix(
        task_ids=tuple(t.id for t in tasks),
        entries=entries,
        reference_errors=tuple(ref_test_errors),
        num_training_runs=runs,
    )


def _eval_config(state: PredictorState) -> PredictorConfig:
    return PredictorConfig(
        arch=state.arch,
        input_resolution=state.resolution,
        num_updates=0,
        random_crop=False,
        horizontal_flip=False,
    )

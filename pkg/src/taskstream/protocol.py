"""Stream driver: meta-train and meta-test passes with causality enforcement.

The driver walks the stream strictly in order, hands the learner a causal
view that exposes only tasks up to the current cursor, threads the learner
state from task to task, appends one record per completed task, and
checkpoints atomically so an interrupted run resumes bit-identically.

The meta-train pass covers the meta-train prefix and scores each task on its
validation split; its reported error averages those tasks. The meta-test pass
restarts from a fresh state, walks the entire stream once, scores on test
splits, averages only the meta-test suffix, and sums compute over every task.
"""

from __future__ import annotations

import abc
import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

from .datastore import atomic_write_bytes
from .errors import CausalityViolation, ConfigError, DataError
from .metalearner import (
    Budgets,
    MetaLearnerState,
    Strategy,
    StrategyFamily,
    evaluate_outcome,
    replace_pretrained,
    state_from_bytes,
    state_to_bytes,
    train_task,
)
from .predictor.config import PredictorConfig
from .streams import Stream, Task

RECORD_SCHEMA_VERSION = 1
CHECKPOINT_MAGIC = b"TSCK0001"

META_TRAIN = "meta_train"
META_TEST = "meta_test"


class CausalView:
    """Read-only window onto the stream: tasks after the cursor are unreachable."""

    def __init__(self, stream: Stream, cursor: int):
        self._stream = stream
        self.cursor = cursor

    def __len__(self) -> int:
        return self.cursor + 1

    def task(self, index: int) -> Task:
        if index < 0:
            raise DataError(f"task index {index} out of range")
        if index > self.cursor:
            raise CausalityViolation(self.cursor, index)
        return self._stream.tasks[index]

    def task_by_id(self, task_id: str) -> Task:
        for index, task in enumerate(self._stream.tasks):
            if task.id == task_id:
                if index > self.cursor:
                    raise CausalityViolation(self.cursor, index)
                return task
        raise DataError(f"no task with id {task_id!r} in stream")


@dataclass
class RunRecord:
    """Per-task outcome of one pass."""

    task_id: str
    task_index: int
    phase: str
    strategy: str
    hparams: dict[str, Any]
    init_provenance: str
    error: float
    flops: int
    learning_curve: tuple[tuple[int, float], ...]
    seed: int
    wall_time: float
    task_meta: dict[str, Any] = field(default_factory=dict)
    schema_version: int = RECORD_SCHEMA_VERSION

    def to_json(self) -> str:
        payload = {
            "v": self.schema_version,
            "task_id": self.task_id,
            "task_index": self.task_index,
            "phase": self.phase,
            "strategy": self.strategy,
            "hparams": self.hparams,
            "init_provenance": self.init_provenance,
            "error": self.error,
            "flops": self.flops,
            "learning_curve": [[s, a] for s, a in self.learning_curve],
            "seed": self.seed,
            "task_meta": self.task_meta,
            "wall_time": self.wall_time,
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "RunRecord":
        data = json.loads(line)
        version = int(data.get("v", -1))
        if version != RECORD_SCHEMA_VERSION:
            raise DataError(
                f"record schema version {version} not supported "
                f"(expected {RECORD_SCHEMA_VERSION})"
            )
        return cls(
            task_id=data["task_id"],
            task_index=int(data["task_index"]),
            phase=data["phase"],
            strategy=data["strategy"],
            hparams=data["hparams"],
            init_provenance=data["init_provenance"],
            error=float(data["error"]),
            flops=int(data["flops"]),
            learning_curve=tuple((int(s), float(a)) for s, a in data["learning_curve"]),
            seed=int(data["seed"]),
            wall_time=float(data["wall_time"]),
            task_meta=data.get("task_meta", {}),
        )


def write_record_log(path: Path, records: Iterable[RunRecord]) -> None:
    lines = "".join(record.to_json() + "\n" for record in records)
    atomic_write_bytes(Path(path), lines.encode("utf-8"))


def read_record_log(path: Path) -> list[RunRecord]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"record log not found: {path}")
    records = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(RunRecord.from_json(line))
    return records


class TaskResult:
    """What a learner hands back for one task."""

    def __init__(
        self,
        *,
        flops: int,
        provenance: str,
        hparams: dict[str, Any],
        learning_curve: tuple[tuple[int, float], ...],
        val_error: float,
        error_for_role: Callable[[str], float],
    ):
        self.flops = flops
        self.provenance = provenance
        self.hparams = hparams
        self.learning_curve = learning_curve
        self.val_error = val_error
        self.error_for_role = error_for_role


class StreamLearner(abc.ABC):
    """Minimal learner interface the protocol drives."""

    @abc.abstractmethod
    def reset(self, seed: int) -> None:
        """Forget everything; called once at the start of each pass."""

    @abc.abstractmethod
    def learn_task(self, index: int, view: CausalView) -> TaskResult:
        """Train on the task at ``index``; past tasks only via ``view``."""

    def state_bytes(self) -> bytes:
        return b""

    def load_state_bytes(self, data: bytes, seed: int) -> None:
        raise NotImplementedError("this learner does not support resumption")


class StrategyLearner(StreamLearner):
    """The standard learner: per-task hyper-parameter search under a strategy."""

    def __init__(self, strategy: Strategy, budgets: Budgets, base_config: PredictorConfig):
        strategy.validate()
        budgets.validate()
        self.strategy = strategy
        self.budgets = budgets
        self.base_config = base_config
        self.state = MetaLearnerState()
        self.run_seed = 0

    def reset(self, seed: int) -> None:
        self.run_seed = seed
        self.state = MetaLearnerState()
        if self.strategy.family in (StrategyFamily.PT, StrategyFamily.PT_FT):
            self.state = replace_pretrained(self.state, self.strategy)

    def learn_task(self, index: int, view: CausalView) -> TaskResult:
        task = view.task(index)
        outcome = train_task(
            self.strategy,
            task,
            index,
            self.state,
            view.task_by_id,
            self.budgets,
            self.base_config,
            self.run_seed,
        )
        self.state = outcome.new_state

        def error_for_role(role: str) -> float:
            if role == "val":
                return outcome.val_error
            return evaluate_outcome(outcome, task.split(role), task.kind, self.strategy)

        return TaskResult(
            flops=outcome.flops,
            provenance=outcome.provenance,
            hparams=outcome.chosen_hparams,
            learning_curve=outcome.report.learning_curve,
            val_error=outcome.val_error,
            error_for_role=error_for_role,
        )

    def state_bytes(self) -> bytes:
        return state_to_bytes(self.state)

    def load_state_bytes(self, data: bytes, seed: int) -> None:
        self.run_seed = seed
        self.state = state_from_bytes(data)
        if (
            self.strategy.family in (StrategyFamily.PT, StrategyFamily.PT_FT)
            and self.state.pretrained is None
        ):
            self.state = replace_pretrained(self.state, self.strategy)

    def strategy_label(self) -> str:
        return self.strategy.label()


@dataclass
class PassResult:
    """Records plus the stream-level aggregates of one pass."""

    phase: str
    records: list[RunRecord]
    mean_error: float
    total_flops: int


def _task_meta(task: Task) -> dict[str, Any]:
    return {
        "name": task.name,
        "domain": task.domain,
        "year": task.year,
        "kind": task.kind.value,
        "train_size": len(task.train),
        "avg_resolution": list(task.avg_resolution),
    }


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def write_checkpoint(
    path: Path,
    *,
    phase: str,
    seed: int,
    cursor: int,
    learner_state: bytes,
    records: list[RunRecord],
) -> None:
    record_bytes = "".join(r.to_json() + "\n" for r in records).encode("utf-8")
    header = {
        "version": 1,
        "phase": phase,
        "seed": seed,
        "cursor": cursor,
        "learner_nbytes": len(learner_state),
        "records_nbytes": len(record_bytes),
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = b"".join(
        [CHECKPOINT_MAGIC, struct.pack(">I", len(head)), head, learner_state, record_bytes]
    )
    atomic_write_bytes(Path(path), blob)


@dataclass
class CheckpointData:
    phase: str
    seed: int
    cursor: int
    learner_state: bytes
    records: list[RunRecord]


def read_checkpoint(path: Path) -> CheckpointData:
    path = Path(path)
    data = path.read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise DataError(f"{path} is not a checkpoint (bad magic)")
    pos = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack(">I", data[pos : pos + 4])
    pos += 4
    try:
        header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: corrupt checkpoint header: {exc}") from exc
    pos += hlen
    if header.get("version") != 1:
        raise DataError(f"{path}: unsupported checkpoint version {header.get('version')}")
    learner_state = data[pos : pos + header["learner_nbytes"]]
    pos += header["learner_nbytes"]
    record_bytes = data[pos : pos + header["records_nbytes"]]
    records = [
        RunRecord.from_json(line)
        for line in record_bytes.decode("utf-8").splitlines()
        if line.strip()
    ]
    return CheckpointData(
        phase=header["phase"],
        seed=int(header["seed"]),
        cursor=int(header["cursor"]),
        learner_state=learner_state,
        records=records,
    )


# ---------------------------------------------------------------------------
# Pass drivers
# ---------------------------------------------------------------------------


def _strategy_label(learner: StreamLearner) -> str:
    label = getattr(learner, "strategy_label", None)
    return label() if callable(label) else type(learner).__name__


def _run_pass(
    stream: Stream,
    learner: StreamLearner,
    *,
    seed: int,
    phase: str,
    num_tasks: int,
    eval_role: str,
    scored_from: int,
    checkpoint_path: Path | None = None,
    resume_from: CheckpointData | None = None,
) -> PassResult:
    records: list[RunRecord] = []
    start_index = 0
    if resume_from is not None:
        if resume_from.phase != phase:
            raise ConfigError(
                f"checkpoint is for phase {resume_from.phase!r}, not {phase!r}"
            )
        learner.load_state_bytes(resume_from.learner_state, resume_from.seed)
        records = list(resume_from.records)
        start_index = resume_from.cursor
        seed = resume_from.seed
        if len(records) != start_index:
            raise DataError("checkpoint cursor disagrees with its record count")
    else:
        learner.reset(seed)
        if checkpoint_path is not None:
            write_checkpoint(
                checkpoint_path,
                phase=phase,
                seed=seed,
                cursor=0,
                learner_state=learner.state_bytes(),
                records=[],
            )

    visited = {r.task_index for r in records}
    for index in range(start_index, num_tasks):
        if index in visited:
            raise DataError(f"task index {index} would be visited twice")
        visited.add(index)
        task = stream.tasks[index]
        view = CausalView(stream, index)
        started = time.monotonic()
        result = learner.learn_task(index, view)
        error = result.error_for_role(eval_role)
        records.append(
            RunRecord(
                task_id=task.id,
                task_index=index,
                phase=phase,
                strategy=_strategy_label(learner),
                hparams=result.hparams,
                init_provenance=result.provenance,
                error=error,
                flops=result.flops,
                learning_curve=result.learning_curve,
                seed=seed,
                wall_time=time.monotonic() - started,
                task_meta=_task_meta(task),
            )
        )
        if checkpoint_path is not None:
            write_checkpoint(
                checkpoint_path,
                phase=phase,
                seed=seed,
                cursor=index + 1,
                learner_state=learner.state_bytes(),
                records=records,
            )

    scored = [r.error for r in records if r.task_index >= scored_from]
    if not scored:
        raise DataError("no scored tasks in this pass")
    mean_error = sum(scored) / len(scored)
    total_flops = sum(r.flops for r in records)
    return PassResult(
        phase=phase, records=records, mean_error=mean_error, total_flops=total_flops
    )


def run_meta_train(
    stream: Stream,
    learner: StreamLearner,
    *,
    seed: int,
    checkpoint_path: Path | None = None,
    resume_from: CheckpointData | None = None,
) -> PassResult:
    """One sweep over the meta-train prefix; errors on validation splits."""
    return _run_pass(
        stream,
        learner,
        seed=seed,
        phase=META_TRAIN,
        num_tasks=stream.boundary,
        eval_role="val",
        scored_from=0,
        checkpoint_path=checkpoint_path,
        resume_from=resume_from,
    )


def run_meta_test(
    stream: Stream,
    learner: StreamLearner,
    *,
    seed: int,
    checkpoint_path: Path | None = None,
    resume_from: CheckpointData | None = None,
) -> PassResult:
    """A single pass over the entire stream from a fresh state.

    Errors are measured on test splits; the reported mean covers only the
    meta-test suffix while compute sums over every task in the stream.
    """
    if stream.boundary >= len(stream):
        raise ConfigError("meta-test pass needs a nonempty meta-test suffix")
    return _run_pass(
        stream,
        learner,
        seed=seed,
        phase=META_TEST,
        num_tasks=len(stream),
        eval_role="test",
        scored_from=stream.boundary,
        checkpoint_path=checkpoint_path,
        resume_from=resume_from,
    )


def resume_pass(
    stream: Stream,
    learner: StreamLearner,
    checkpoint_path: Path,
) -> PassResult:
    """Continue an interrupted pass from its checkpoint file."""
    data = read_checkpoint(checkpoint_path)
    if data.phase == META_TRAIN:
        return run_meta_train(
            stream, learner, seed=data.seed, checkpoint_path=checkpoint_path, resume_from=data
        )
    return run_meta_test(
        stream, learner, seed=data.seed, checkpoint_path=checkpoint_path, resume_from=data
    )

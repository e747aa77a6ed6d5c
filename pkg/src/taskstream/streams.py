"""Task and stream domain types plus the stream-editing operations.

A stream is an ordered tuple of classification tasks with a boundary index
splitting it into a meta-train prefix and a meta-test suffix. Tasks and
streams are immutable after construction, so views and variants can be shared
freely across threads.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DataError


class TaskKind(enum.Enum):
    SINGLE_LABEL = "single_label"
    MULTI_LABEL = "multi_label"

    @classmethod
    def parse(cls, value: str) -> "TaskKind":
        aliases = {"C": cls.SINGLE_LABEL, "M": cls.MULTI_LABEL}
        if value in aliases:
            return aliases[value]
        try:
            return cls(value)
        except ValueError as exc:
            raise DataError(f"unknown task kind {value!r}") from exc


@dataclass(frozen=True)
class Example:
    """One (input, label) pair.

    ``input`` is either an image array (H, W[, C], uint8) or a feature vector.
    ``label`` is a class index for single-label tasks or a binary vector of
    length ``num_classes`` for multi-label tasks.
    """

    input: np.ndarray
    label: int | np.ndarray

    def content_hash(self) -> bytes:
        """Hash of the raw input content; labels are deliberately excluded."""
        arr = np.ascontiguousarray(self.input)
        digest = hashlib.sha256()
        digest.update(str(arr.dtype).encode())
        digest.update(str(arr.shape).encode())
        digest.update(arr.tobytes())
        return digest.digest()


Split = tuple[Example, ...]

SPLIT_ROLES = ("train", "val", "test")


def _validate_labels(examples: Split, kind: TaskKind, num_classes: int, where: str) -> None:
    for ex in examples:
        if kind is TaskKind.SINGLE_LABEL:
            label = int(ex.label)
            if not 0 <= label < num_classes:
                raise DataError(f"{where}: label {label} outside [0, {num_classes})")
        else:
            vec = np.asarray(ex.label)
            if vec.shape != (num_classes,):
                raise DataError(
                    f"{where}: multi-label vector has shape {vec.shape}, "
                    f"expected ({num_classes},)"
                )
            if not np.isin(vec, (0, 1)).all():
                raise DataError(f"{where}: multi-label vector is not binary")


@dataclass(frozen=True)
class Task:
    """One classification problem with disjoint train/val/test splits."""

    id: str
    name: str
    year: int
    domain: str
    kind: TaskKind
    num_classes: int
    train: Split
    val: Split
    test: Split
    avg_resolution: tuple[int, int] = (0, 0)

    def split(self, role: str) -> Split:
        if role not in SPLIT_ROLES:
            raise ValueError(f"unknown split role {role!r}")
        return getattr(self, role)

    @property
    def train_size(self) -> int:
        return len(self.train)

    def validate(self, check_disjoint: bool = True) -> None:
        if self.num_classes < 2:
            raise DataError(f"task {self.id}: num_classes must be >= 2")
        for role in SPLIT_ROLES:
            examples = self.split(role)
            if not examples:
                raise DataError(f"task {self.id}: empty {role} split")
            _validate_labels(examples, self.kind, self.num_classes, f"task {self.id} {role}")
        if check_disjoint:
            seen: dict[bytes, str] = {}
            for role in SPLIT_ROLES:
                for ex in self.split(role):
                    key = ex.content_hash()
                    prev = seen.get(key)
                    if prev is not None and prev != role:
                        raise DataError(
                            f"task {self.id}: duplicate input shared by "
                            f"{prev} and {role} splits"
                        )
                    seen[key] = role


@dataclass(frozen=True)
class Stream:
    """Ordered task sequence with a meta-train/meta-test boundary."""

    tasks: tuple[Task, ...]
    boundary: int
    source: str = "generated"

    def __post_init__(self) -> None:
        if not 0 < self.boundary <= len(self.tasks):
            raise DataError(
                f"boundary {self.boundary} invalid for stream of {len(self.tasks)} tasks"
            )
        ids = [t.id for t in self.tasks]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DataError(f"duplicate task ids in stream: {dupes}")

    def __len__(self) -> int:
        return len(self.tasks)

    @property
    def meta_train(self) -> tuple[Task, ...]:
        return self.tasks[: self.boundary]

    @property
    def meta_test(self) -> tuple[Task, ...]:
        return self.tasks[self.boundary :]

    def task_by_id(self, task_id: str) -> Task:
        for task in self.tasks:
            if task.id == task_id:
                return task
        raise DataError(f"no task with id {task_id!r} in stream")

    def validate_tasks(self, check_disjoint: bool = True) -> None:
        for task in self.tasks:
            task.validate(check_disjoint=check_disjoint)


def split_boundary(stream: Stream) -> tuple[tuple[Task, ...], tuple[Task, ...]]:
    """Return the (meta-train, meta-test) views; their concatenation is the stream."""
    return stream.meta_train, stream.meta_test


# ---------------------------------------------------------------------------
# Class-partition streams
# ---------------------------------------------------------------------------


def make_class_partition_stream(base_task: Task, num_partitions: int, seed: int) -> Stream:
    """Split one task's classes into disjoint groups, one task per group.

    Classes are shuffled by ``seed`` before grouping; labels within each new
    task are re-indexed from zero, and every example is routed to the task
    owning its original class.
    """
    if base_task.kind is not TaskKind.SINGLE_LABEL:
        raise DataError("class partitioning requires a single-label base task")
    if num_partitions < 1:
        raise DataError("num_partitions must be >= 1")
    if base_task.num_classes % num_partitions != 0:
        raise DataError(
            f"{base_task.num_classes} classes not divisible by {num_partitions} partitions"
        )
    per_task = base_task.num_classes // num_partitions
    if per_task < 2:
        raise DataError("each partition must keep at least 2 classes")

    rng = np.random.default_rng(seed)
    order = rng.permutation(base_task.num_classes)
    owner = {int(cls): (pos // per_task, pos % per_task) for pos, cls in enumerate(order)}

    buckets: list[dict[str, list[Example]]] = [
        {role: [] for role in SPLIT_ROLES} for _ in range(num_partitions)
    ]
    for role in SPLIT_ROLES:
        for ex in base_task.split(role):
            part, new_label = owner[int(ex.label)]
            buckets[part][role].append(Example(ex.input, new_label))

    tasks = []
    for part in range(num_partitions):
        tasks.append(
            Task(
                id=f"{base_task.id}-part{part:03d}",
                name=f"{base_task.name}-part{part:03d}",
                year=base_task.year,
                domain=base_task.domain,
                kind=TaskKind.SINGLE_LABEL,
                num_classes=per_task,
                train=tuple(buckets[part]["train"]),
                val=tuple(buckets[part]["val"]),
                test=tuple(buckets[part]["test"]),
                avg_resolution=base_task.avg_resolution,
            )
        )
    return Stream(tasks=tuple(tasks), boundary=num_partitions, source="class_partition")


# ---------------------------------------------------------------------------
# Stream variants (task-ordering and crippled-stream ablations)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StreamVariant:
    """A declarative stream edit; see the ``*_variant`` constructors below.

    Removal variants edit the meta-train portion only and never touch the
    meta-test suffix; shuffle variants permute positions without changing the
    boundary count.
    """

    kind: str
    k: int = 0
    seed: int = 0
    domains: frozenset[str] = field(default_factory=frozenset)
    names: frozenset[str] = field(default_factory=frozenset)

    KINDS = (
        "within_year_shuffle",
        "full_shuffle",
        "remove_first",
        "remove_last",
        "remove_random",
        "keep_largest",
        "filter_domains",
        "exclude_named",
    )


def within_year_shuffle(seed: int) -> StreamVariant:
    return StreamVariant("within_year_shuffle", seed=seed)


def full_shuffle(seed: int) -> StreamVariant:
    return StreamVariant("full_shuffle", seed=seed)


def remove_first(k: int) -> StreamVariant:
    return StreamVariant("remove_first", k=k)


def remove_last(k: int) -> StreamVariant:
    return StreamVariant("remove_last", k=k)


def remove_random(k: int, seed: int) -> StreamVariant:
    return StreamVariant("remove_random", k=k, seed=seed)


def keep_largest(k: int) -> StreamVariant:
    return StreamVariant("keep_largest", k=k)


def filter_domains(domains: Iterable[str]) -> StreamVariant:
    return StreamVariant("filter_domains", domains=frozenset(domains))


def exclude_named(names: Iterable[str]) -> StreamVariant:
    return StreamVariant("exclude_named", names=frozenset(names))


def _check_removal(stream: Stream, k: int) -> None:
    if k < 0:
        raise DataError("removal count must be non-negative")
    if k >= stream.boundary:
        raise DataError(
            f"cannot remove {k} of {stream.boundary} meta-train tasks "
            "(meta-train must stay nonempty)"
        )


def _rebuild(stream: Stream, meta_train: Sequence[Task]) -> Stream:
    tasks = tuple(meta_train) + stream.meta_test
    return Stream(tasks=tasks, boundary=len(meta_train), source=stream.source)


def apply_variant(stream: Stream, variant: StreamVariant) -> Stream:
    """Return a new stream with the variant applied; the input is unchanged."""
    kind = variant.kind
    if kind not in StreamVariant.KINDS:
        raise DataError(f"unknown stream variant {kind!r}")

    if kind == "full_shuffle":
        rng = np.random.default_rng(variant.seed)
        order = rng.permutation(len(stream))
        tasks = tuple(stream.tasks[i] for i in order)
        return Stream(tasks=tasks, boundary=stream.boundary, source=stream.source)

    if kind == "within_year_shuffle":
        rng = np.random.default_rng(variant.seed)
        tasks = list(stream.tasks)
        positions: dict[int, list[int]] = {}
        for pos, task in enumerate(tasks):
            positions.setdefault(task.year, []).append(pos)
        for year in sorted(positions):
            slots = positions[year]
            perm = rng.permutation(len(slots))
            shuffled = [tasks[slots[i]] for i in perm]
            for slot, task in zip(slots, shuffled):
                tasks[slot] = task
        return Stream(tasks=tuple(tasks), boundary=stream.boundary, source=stream.source)

    meta_train = list(stream.meta_train)

    if kind == "remove_first":
        _check_removal(stream, variant.k)
        return _rebuild(stream, meta_train[variant.k :])

    if kind == "remove_last":
        _check_removal(stream, variant.k)
        return _rebuild(stream, meta_train[: len(meta_train) - variant.k])

    if kind == "remove_random":
        _check_removal(stream, variant.k)
        rng = np.random.default_rng(variant.seed)
        drop = set(rng.choice(len(meta_train), size=variant.k, replace=False).tolist())
        return _rebuild(stream, [t for i, t in enumerate(meta_train) if i not in drop])

    if kind == "keep_largest":
        if not 0 < variant.k <= len(meta_train):
            raise DataError(
                f"keep_largest({variant.k}) invalid for {len(meta_train)} meta-train tasks"
            )
        ranked = sorted(
            range(len(meta_train)),
            key=lambda i: (-meta_train[i].train_size, i),
        )
        keep = set(ranked[: variant.k])
        return _rebuild(stream, [t for i, t in enumerate(meta_train) if i in keep])

    if kind == "filter_domains":
        present = {t.domain for t in stream.tasks}
        unknown = variant.domains - present
        if unknown:
            raise DataError(f"unknown domain tags: {sorted(unknown)}")
        kept = [t for t in meta_train if t.domain in variant.domains]
        if not kept:
            raise DataError("filter_domains left the meta-train stream empty")
        return _rebuild(stream, kept)

    if kind == "exclude_named":
        kept = [t for t in meta_train if t.name not in variant.names and t.id not in variant.names]
        if not kept:
            raise DataError("exclude_named left the meta-train stream empty")
        return _rebuild(stream, kept)

    raise AssertionError(kind)


def variant_from_dict(data: dict) -> StreamVariant:
    """Build a variant from its config-file form, e.g. {kind: remove_first, k: 30}."""
    kind = data.get("kind")
    if kind not in StreamVariant.KINDS:
        raise DataError(f"unknown stream variant kind {kind!r}")
    return StreamVariant(
        kind=kind,
        k=int(data.get("k", 0)),
        seed=int(data.get("seed", 0)),
        domains=frozenset(data.get("domains", ())),
        names=frozenset(data.get("names", ())),
    )

"""Synthetic task streams with planted structure.

Each task draws inputs x ~ N(0, I_d) and labels them through a two-layer
teacher: latent features z = tanh(g * A x) and class scores V^T z. Related
tasks share the feature map A and differ only by a perturbed score matrix V,
so a learner that inherits a backbone trained on the parent recovers the
shared features for free. Anti-related tasks get an A whose rows are
orthogonal to the parent's row space, so the parent's features carry no
signal for them. Tasks named in ``repeat`` reappear at the end of the stream
as fresh draws from the same teacher under a new id, which is what the
forward-transfer metric needs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .streams import Example, Stream, Task, TaskKind

TEACHER_GAIN = 2.0
_MAX_DRAW_ATTEMPTS = 64


@dataclass(frozen=True)
class RelatednessEdge:
    """child's labeling is a perturbation of parent's; strength 0 = clone, 1 = fresh."""

    child: int
    parent: int
    strength: float = 0.3


@dataclass(frozen=True)
class SyntheticStreamSpec:
    num_tasks: int
    num_classes: int | tuple[int, ...] = 3
    input_dim: int = 16
    train_size: int | tuple[int, ...] = 64
    val_size: int | tuple[int, ...] = 64
    test_size: int | tuple[int, ...] = 128
    teacher_width: int = 6
    related: tuple[RelatednessEdge, ...] = ()
    anti_related: tuple[tuple[int, int], ...] = ()
    multi_label: tuple[int, ...] = ()
    repeat: tuple[int, ...] = ()
    label_noise: float | tuple[float, ...] = 0.0  # irreducible error floor per task
    boundary: int | None = None
    seed: int = 0

    def per_task(self, value: int | tuple[int, ...], index: int) -> int:
        if isinstance(value, int):
            return value
        return value[index]

    def per_task_float(self, value: float | tuple[float, ...], index: int) -> float:
        if isinstance(value, (int, float)):
            return float(value)
        return float(value[index])

    def validate(self) -> None:
        if self.num_tasks < 1:
            raise DataError("num_tasks must be >= 1")
        total = self.num_tasks + len(self.repeat)
        for i in range(self.num_tasks):
            classes = self.per_task(self.num_classes, i)
            if classes < 2:
                raise DataError(f"task {i}: num_classes must be >= 2")
            for name in ("train_size", "val_size", "test_size"):
                size = self.per_task(getattr(self, name), i)
                if size < classes * 2:
                    raise DataError(
                        f"task {i}: {name}={size} below minimum {classes * 2}"
                    )
        for edge in self.related:
            if not (0 <= edge.parent < self.num_tasks and 0 <= edge.child < self.num_tasks):
                raise DataError(f"relatedness edge {edge} references invalid task index")
            if edge.parent >= edge.child:
                raise DataError(f"relatedness edge {edge}: parent must precede child")
            if not 0.0 <= edge.strength <= 1.0:
                raise DataError(f"relatedness edge {edge}: strength outside [0, 1]")
        for child, parent in self.anti_related:
            if not (0 <= parent < self.num_tasks and 0 <= child < self.num_tasks):
                raise DataError("anti-relatedness edge references invalid task index")
            if parent >= child:
                raise DataError("anti-relatedness edge: parent must precede child")
        for idx in self.repeat:
            if not 0 <= idx < self.num_tasks:
                raise DataError(f"repeat index {idx} out of range")
        for idx in self.multi_label:
            if not 0 <= idx < self.num_tasks:
                raise DataError(f"multi_label index {idx} out of range")
        for i in range(self.num_tasks):
            noise = self.per_task_float(self.label_noise, i)
            if not 0.0 <= noise < 1.0:
                raise DataError(f"task {i}: label_noise must lie in [0, 1)")
        if self.teacher_width > self.input_dim // 2 and self.anti_related:
            raise DataError(
                "anti-related tasks need teacher_width <= input_dim / 2 "
                "so an orthogonal feature map exists"
            )
        if self.boundary is not None and not 0 < self.boundary <= total:
            raise DataError(f"boundary {self.boundary} invalid for {total} tasks")


@dataclass(frozen=True)
class _Teacher:
    feature_map: np.ndarray  # (k, d), unit-norm rows
    scores: np.ndarray  # (k, c)

    def latent(self, x: np.ndarray) -> np.ndarray:
        return np.tanh(TEACHER_GAIN * (x @ self.feature_map.T))

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.latent(x) @ self.scores


def _orthonormal_rows(rng: np.random.Generator, k: int, d: int) -> np.ndarray:
    mat = rng.standard_normal((d, max(k, 1)))
    q, _ = np.linalg.qr(mat)
    return q[:, :k].T.copy()


def _orthogonal_complement_rows(
    rng: np.random.Generator, base: np.ndarray, k: int, d: int
) -> np.ndarray:
    raw = rng.standard_normal((d, k))
    raw = raw - base.T @ (base @ raw)  # project out the parent's row space
    q, _ = np.linalg.qr(raw)
    return q[:, :k].T.copy()


def _unit_columns(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=0, keepdims=True)
    return matrix / np.maximum(norms, 1e-12)


def _fresh_scores(rng: np.random.Generator, width: int, classes: int) -> np.ndarray:
    # unit columns keep every class competitive under the argmax labeling
    return _unit_columns(rng.standard_normal((width, classes)))


def _perturbed_scores(
    rng: np.random.Generator, parent: np.ndarray, strength: float
) -> np.ndarray:
    fresh = rng.standard_normal(parent.shape)
    mixed = (1.0 - strength) * parent + strength * fresh
    return _unit_columns(mixed)


def _draw_split(
    rng: np.random.Generator,
    teacher: _Teacher,
    size: int,
    num_classes: int,
    multi_label: bool,
    label_noise: float,
) -> list[Example]:
    """Draw examples ensuring every class is represented at least twice."""
    for _ in range(_MAX_DRAW_ATTEMPTS):
        x = rng.standard_normal((size, teacher.feature_map.shape[1]))
        logits = teacher.logits(x)
        if multi_label:
            labels = (logits > 0).astype(np.int8)
            counts = labels.sum(axis=0)
        else:
            labels = logits.argmax(axis=1)
            if label_noise > 0.0:
                flip = rng.random(size) < label_noise
                shift = rng.integers(1, num_classes, size)
                labels = np.where(flip, (labels + shift) % num_classes, labels)
            counts = np.bincount(labels, minlength=num_classes)
        if (counts >= 2).all():
            out = []
            for i in range(size):
                label = labels[i].copy() if multi_label else int(labels[i])
                out.append(Example(x[i].astype(np.float64), label))
            return out
    raise DataError(
        "could not draw a split with every class represented; "
        "increase split sizes or reduce num_classes"
    )


def make_synthetic_stream(spec: SyntheticStreamSpec) -> Stream:
    """Deterministically build a stream from ``spec``; same spec+seed, same bytes."""
    spec.validate()
    root = np.random.SeedSequence(spec.seed)
    teacher_seeds, data_seeds, repeat_seeds = root.spawn(3)
    teacher_rngs = [np.random.default_rng(s) for s in teacher_seeds.spawn(spec.num_tasks)]

    related_parent = {e.child: e for e in spec.related}
    anti_parent = dict((c, p) for c, p in spec.anti_related)
    overlap = set(related_parent) & set(anti_parent)
    if overlap:
        raise DataError(f"tasks {sorted(overlap)} are both related and anti-related")

    teachers: list[_Teacher] = []
    for i in range(spec.num_tasks):
        rng = teacher_rngs[i]
        classes = spec.per_task(spec.num_classes, i)
        if i in related_parent:
            edge = related_parent[i]
            parent = teachers[edge.parent]
            feature_map = parent.feature_map
            if parent.scores.shape[1] == classes:
                scores = _perturbed_scores(rng, parent.scores, edge.strength)
            else:
                # class counts differ: share the feature map, draw fresh scores
                scores = _fresh_scores(rng, spec.teacher_width, classes)
        elif i in anti_parent:
            parent = teachers[anti_parent[i]]
            feature_map = _orthogonal_complement_rows(
                rng, parent.feature_map, spec.teacher_width, spec.input_dim
            )
            scores = _fresh_scores(rng, spec.teacher_width, classes)
        else:
            feature_map = _orthonormal_rows(rng, spec.teacher_width, spec.input_dim)
            scores = _fresh_scores(rng, spec.teacher_width, classes)
        teachers.append(_Teacher(feature_map, scores))

    def build_task(index: int, task_id: str, name: str, seed_seq: np.random.SeedSequence) -> Task:
        rng = np.random.default_rng(seed_seq)
        classes = spec.per_task(spec.num_classes, index)
        multi = index in spec.multi_label
        noise = spec.per_task_float(spec.label_noise, index)
        splits = {}
        for role in ("train", "val", "test"):
            size = spec.per_task(getattr(spec, f"{role}_size"), index)
            splits[role] = tuple(
                _draw_split(rng, teachers[index], size, classes, multi, noise)
            )
        return Task(
            id=task_id,
            name=name,
            year=2000 + index,
            domain="synthetic",
            kind=TaskKind.MULTI_LABEL if multi else TaskKind.SINGLE_LABEL,
            num_classes=classes,
            train=splits["train"],
            val=splits["val"],
            test=splits["test"],
        )

    tasks = []
    for i, seq in enumerate(data_seeds.spawn(spec.num_tasks)):
        tasks.append(build_task(i, f"syn-{i:03d}", f"syn-{i:03d}", seq))
    for j, (idx, seq) in enumerate(zip(spec.repeat, repeat_seeds.spawn(len(spec.repeat)))):
        tasks.append(build_task(idx, f"syn-{idx:03d}-rep{j}", f"syn-{idx:03d}", seq))

    boundary = spec.boundary if spec.boundary is not None else len(tasks)
    return Stream(tasks=tuple(tasks), boundary=boundary, source="synthetic")


def spec_from_dict(data: dict) -> SyntheticStreamSpec:
    """Build a generator spec from its config-file form."""

    def as_int_or_tuple(value):
        if isinstance(value, (list, tuple)):
            return tuple(int(v) for v in value)
        return int(value)

    related = tuple(
        RelatednessEdge(int(e["child"]), int(e["parent"]), float(e.get("strength", 0.3)))
        for e in data.get("related", ())
    )
    anti = tuple((int(e["child"]), int(e["parent"])) for e in data.get("anti_related", ()))
    known = {
        "num_tasks", "num_classes", "input_dim", "train_size", "val_size",
        "test_size", "teacher_width", "related", "anti_related", "multi_label",
        "repeat", "label_noise", "boundary", "seed",
    }
    unknown = set(data) - known
    if unknown:
        raise DataError(f"unknown synthetic-spec fields: {sorted(unknown)}")
    return SyntheticStreamSpec(
        num_tasks=int(data["num_tasks"]),
        num_classes=as_int_or_tuple(data.get("num_classes", 3)),
        input_dim=int(data.get("input_dim", 16)),
        train_size=as_int_or_tuple(data.get("train_size", 64)),
        val_size=as_int_or_tuple(data.get("val_size", 64)),
        test_size=as_int_or_tuple(data.get("test_size", 128)),
        teacher_width=int(data.get("teacher_width", 6)),
        related=related,
        anti_related=anti,
        multi_label=tuple(int(i) for i in data.get("multi_label", ())),
        repeat=tuple(int(i) for i in data.get("repeat", ())),
        label_noise=(
            tuple(float(v) for v in data["label_noise"])
            if isinstance(data.get("label_noise"), (list, tuple))
            else float(data.get("label_noise", 0.0))
        ),
        boundary=None if data.get("boundary") is None else int(data["boundary"]),
        seed=int(data.get("seed", 0)),
    )

"""Shared fixtures: tiny deterministic tasks and streams."""

from __future__ import annotations

import numpy as np
import pytest

from taskstream.streams import Example, Stream, Task, TaskKind


def make_vector_task(
    task_id: str,
    num_classes: int = 3,
    n: int = 24,
    dim: int = 6,
    seed: int = 0,
    kind: TaskKind = TaskKind.SINGLE_LABEL,
    year: int = 2000,
    domain: str = "synthetic",
) -> Task:
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((dim, num_classes))

    def draw(count):
        x = rng.standard_normal((count, dim))
        logits = x @ w
        if kind is TaskKind.SINGLE_LABEL:
            labels = logits.argmax(axis=1)
            return tuple(Example(x[i], int(labels[i])) for i in range(count))
        labels = (logits > 0).astype(np.int8)
        return tuple(Example(x[i], labels[i]) for i in range(count))

    return Task(
        id=task_id,
        name=task_id,
        year=year,
        domain=domain,
        kind=kind,
        num_classes=num_classes,
        train=draw(n),
        val=draw(max(8, n // 2)),
        test=draw(max(8, n // 2)),
    )


def make_image_task(
    task_id: str,
    num_classes: int = 2,
    n: int = 12,
    size: int = 12,
    seed: int = 0,
) -> Task:
    rng = np.random.default_rng(seed)

    def draw(count):
        examples = []
        for _ in range(count):
            label = int(rng.integers(0, num_classes))
            img = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
            # plant a label-dependent brightness cue
            img[:, :, 0] = np.clip(img[:, :, 0] // 2 + label * 120, 0, 255)
            examples.append(Example(img.astype(np.uint8), label))
        return tuple(examples)

    return Task(
        id=task_id,
        name=task_id,
        year=2001,
        domain="testimg",
        kind=TaskKind.SINGLE_LABEL,
        num_classes=num_classes,
        train=draw(n),
        val=draw(max(6, n // 2)),
        test=draw(max(6, n // 2)),
    )


@pytest.fixture
def vector_stream() -> Stream:
    tasks = tuple(
        make_vector_task(f"task-{i}", seed=i, year=2000 + i, domain="synthetic")
        for i in range(4)
    )
    return Stream(tasks=tasks, boundary=3)

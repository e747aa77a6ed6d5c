"""Stream domain types, boundary views, class partitions and variants."""

from __future__ import annotations

import numpy as np
import pytest

from taskstream.errors import DataError
from taskstream.streams import (
    Example,
    Stream,
    Task,
    TaskKind,
    apply_variant,
    exclude_named,
    filter_domains,
    full_shuffle,
    keep_largest,
    make_class_partition_stream,
    remove_first,
    remove_last,
    remove_random,
    split_boundary,
    within_year_shuffle,
)

from conftest import make_vector_task


def test_task_kind_aliases():
    assert TaskKind.parse("C") is TaskKind.SINGLE_LABEL
    assert TaskKind.parse("M") is TaskKind.MULTI_LABEL
    assert TaskKind.parse("single_label") is TaskKind.SINGLE_LABEL
    with pytest.raises(DataError):
        TaskKind.parse("X")


def test_task_validation_rejects_bad_labels():
    good = make_vector_task("t0")
    good.validate()
    bad = Task(
        id="bad",
        name="bad",
        year=2000,
        domain="d",
        kind=TaskKind.SINGLE_LABEL,
        num_classes=2,
        train=(Example(np.zeros(3), 5),),
        val=(Example(np.ones(3), 0),),
        test=(Example(np.full(3, 2.0), 1),),
    )
    with pytest.raises(DataError, match="label 5"):
        bad.validate()


def test_task_validation_detects_cross_split_duplicates():
    shared = np.arange(4.0)
    task = Task(
        id="dup",
        name="dup",
        year=2000,
        domain="d",
        kind=TaskKind.SINGLE_LABEL,
        num_classes=2,
        train=(Example(shared, 0), Example(np.ones(4), 1)),
        val=(Example(shared.copy(), 1),),
        test=(Example(np.full(4, 3.0), 0),),
    )
    with pytest.raises(DataError, match="duplicate input"):
        task.validate()


def test_stream_invariants():
    tasks = tuple(make_vector_task(f"t{i}", seed=i) for i in range(3))
    with pytest.raises(DataError):
        Stream(tasks=tasks, boundary=0)
    with pytest.raises(DataError):
        Stream(tasks=tasks, boundary=4)
    with pytest.raises(DataError, match="duplicate task ids"):
        Stream(tasks=tasks + (tasks[0],), boundary=2)


def test_split_boundary_partitions(vector_stream):
    train, test = split_boundary(vector_stream)
    assert train + test == vector_stream.tasks
    assert len(train) == 3 and len(test) == 1
    edge = Stream(tasks=vector_stream.tasks, boundary=len(vector_stream))
    train, test = split_boundary(edge)
    assert len(test) == 0


# ---------------------------------------------------------------------------
# class partitions
# ---------------------------------------------------------------------------


def _partition_base(num_classes=6, per_class=8, seed=3):
    rng = np.random.default_rng(seed)

    def draw(count_per_class):
        out = []
        for cls in range(num_classes):
            for _ in range(count_per_class):
                out.append(Example(rng.standard_normal(5), cls))
        return tuple(out)

    return Task(
        id="base",
        name="base",
        year=2010,
        domain="object",
        kind=TaskKind.SINGLE_LABEL,
        num_classes=num_classes,
        train=draw(per_class),
        val=draw(2),
        test=draw(2),
    )


def test_class_partition_shapes_and_routing():
    base = _partition_base()
    stream = make_class_partition_stream(base, 3, seed=0)
    assert len(stream) == 3
    for task in stream.tasks:
        assert task.num_classes == 2
        task.validate()
    # total example counts preserved across tasks and splits
    for role in ("train", "val", "test"):
        total = sum(len(t.split(role)) for t in stream.tasks)
        assert total == len(base.split(role))


def test_class_partition_identity_case():
    base = _partition_base(num_classes=4)
    stream = make_class_partition_stream(base, 1, seed=9)
    assert len(stream) == 1
    task = stream.tasks[0]
    assert task.num_classes == base.num_classes
    assert len(task.train) == len(base.train)
    # label re-indexing is a permutation of the original classes
    original = sorted(int(e.label) for e in base.train)
    relabeled = sorted(int(e.label) for e in task.train)
    assert relabeled == original == sorted(list(range(4)) * (len(base.train) // 4))


def test_class_partition_divisibility_error():
    base = _partition_base(num_classes=6)
    with pytest.raises(DataError, match="divisible"):
        make_class_partition_stream(base, 4, seed=0)


def test_class_partition_disjoint_classes():
    base = _partition_base(num_classes=6)
    stream = make_class_partition_stream(base, 2, seed=1)
    # recover original class sets by content hash
    by_hash = {}
    for role in ("train", "val", "test"):
        for ex in base.split(role):
            by_hash[ex.content_hash()] = int(ex.label)
    original_sets = []
    for task in stream.tasks:
        classes = set()
        for role in ("train", "val", "test"):
            for ex in task.split(role):
                classes.add(by_hash[ex.content_hash()])
        original_sets.append(classes)
    assert original_sets[0].isdisjoint(original_sets[1])


# ---------------------------------------------------------------------------
# variants
# ---------------------------------------------------------------------------


def _stream(n=8, boundary=6) -> Stream:
    tasks = []
    for i in range(n):
        tasks.append(
            make_vector_task(
                f"v{i}",
                n=16 + 4 * i,  # distinct train sizes for keep_largest
                seed=i,
                year=2000 + i // 2,
                domain="ocr" if i % 2 else "object",
            )
        )
    return Stream(tasks=tuple(tasks), boundary=boundary)


def test_variants_are_pure():
    stream = _stream()
    before = [t.id for t in stream.tasks]
    apply_variant(stream, remove_first(2))
    apply_variant(stream, full_shuffle(1))
    assert [t.id for t in stream.tasks] == before


def test_remove_first_composes():
    stream = _stream()
    one = apply_variant(apply_variant(stream, remove_first(2)), remove_first(1))
    two = apply_variant(stream, remove_first(3))
    assert [t.id for t in one.tasks] == [t.id for t in two.tasks]
    assert one.boundary == two.boundary == 3


def test_removals_never_touch_meta_test():
    stream = _stream()
    test_ids = [t.id for t in stream.meta_test]
    for variant in (
        remove_first(2),
        remove_last(2),
        remove_random(2, seed=3),
        keep_largest(3),
        filter_domains({"object"}),
        exclude_named({"v0"}),
    ):
        out = apply_variant(stream, variant)
        assert [t.id for t in out.meta_test] == test_ids


def test_remove_counts():
    stream = _stream()
    assert apply_variant(stream, remove_first(2)).boundary == 4
    assert len(apply_variant(stream, remove_last(2))) == 6
    with pytest.raises(DataError):
        apply_variant(stream, remove_first(6))  # would empty meta-train


def test_exclude_named_by_name():
    stream = _stream()
    out = apply_variant(stream, exclude_named({"v1"}))
    assert len(out.meta_train) == 5
    assert "v1" not in [t.id for t in out.tasks]


def test_keep_largest_keeps_order():
    stream = _stream()
    out = apply_variant(stream, keep_largest(3))
    kept = [t.id for t in out.meta_train]
    assert kept == ["v3", "v4", "v5"]  # three largest meta-train tasks, stream order


def test_filter_domains_unknown_tag():
    stream = _stream()
    with pytest.raises(DataError, match="unknown domain"):
        apply_variant(stream, filter_domains({"satellite"}))


def test_shuffles_preserve_multiset():
    stream = _stream()
    for variant in (full_shuffle(7), within_year_shuffle(7)):
        out = apply_variant(stream, variant)
        assert sorted(t.id for t in out.tasks) == sorted(t.id for t in stream.tasks)
        assert out.boundary == stream.boundary


def test_within_year_shuffle_respects_year_groups():
    stream = _stream()
    out = apply_variant(stream, within_year_shuffle(11))
    assert [t.year for t in out.tasks] == [t.year for t in stream.tasks]


def test_within_year_shuffle_singleton_years_identity():
    tasks = tuple(
        make_vector_task(f"s{i}", seed=i, year=1990 + i) for i in range(5)
    )
    stream = Stream(tasks=tasks, boundary=4)
    out = apply_variant(stream, within_year_shuffle(123))
    assert [t.id for t in out.tasks] == [t.id for t in stream.tasks]

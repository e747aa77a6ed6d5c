"""Manifest writing/loading: checksums, boundaries, error reporting."""

from __future__ import annotations

import json

import numpy as np
import pytest

from taskstream.errors import DataError
from taskstream.manifest import (
    load_stream,
    short_stream_rows,
    write_manifest,
    write_task_to_dir,
)
from taskstream.streams import TaskKind

from conftest import make_image_task, make_vector_task


def _write_stream(tmp_path, tasks, boundary, mutate_rows=None):
    rows = []
    for task in tasks:
        rows.append(write_task_to_dir(task, tmp_path / task.id))
    if mutate_rows:
        mutate_rows(rows)
    manifest_path = tmp_path / "stream.manifest"
    write_manifest(manifest_path, rows, boundary)
    return manifest_path


def test_round_trip_vector_tasks(tmp_path):
    tasks = [make_vector_task(f"t{i}", seed=i, year=2000 + i) for i in range(3)]
    path = _write_stream(tmp_path, tasks, boundary=2)
    stream = load_stream(path)
    assert len(stream) == 3
    assert stream.boundary == 2
    assert [t.id for t in stream.tasks] == ["t0", "t1", "t2"]
    original = tasks[1].train[0].input
    loaded = stream.tasks[1].train[0].input
    np.testing.assert_array_equal(original, loaded)


def test_round_trip_image_task(tmp_path):
    task = make_image_task("img0")
    path = _write_stream(tmp_path, [task], boundary=1)
    stream = load_stream(path)
    loaded = stream.tasks[0]
    assert loaded.kind is TaskKind.SINGLE_LABEL
    np.testing.assert_array_equal(loaded.train[0].input, task.train[0].input)
    assert loaded.train[0].input.dtype == np.uint8


def test_kind_aliases_accepted(tmp_path):
    task = make_vector_task("t0", year=2004, domain="ocr")

    def use_paper_codes(rows):
        rows[0]["kind"] = "C"
        rows[0]["domain"] = "ocr"
        rows[0]["year"] = 2004

    path = _write_stream(tmp_path, [task], boundary=1, mutate_rows=use_paper_codes)
    stream = load_stream(path)
    assert stream.tasks[0].kind is TaskKind.SINGLE_LABEL
    assert stream.tasks[0].domain == "ocr"
    assert stream.tasks[0].year == 2004


def test_row_count_and_order_match_manifest(tmp_path):
    tasks = [make_vector_task(f"t{i}", seed=i, year=2000 + i) for i in range(4)]
    path = _write_stream(tmp_path, tasks, boundary=4)
    lines = [l for l in path.read_text().splitlines() if l.strip()]
    stream = load_stream(path)
    assert len(stream) == len(lines) - 1  # header line plus one row per task


def test_checksum_mismatch_detected(tmp_path):
    task = make_vector_task("t0")
    path = _write_stream(tmp_path, [task], boundary=1)
    split_file = tmp_path / "t0" / "train.records"
    split_file.write_bytes(split_file.read_bytes() + b"\x00")
    with pytest.raises(DataError, match="checksum mismatch"):
        load_stream(path)


def test_missing_split_file_names_task(tmp_path):
    task = make_vector_task("t0")
    path = _write_stream(tmp_path, [task], boundary=1)
    (tmp_path / "t0" / "val.records").unlink()
    with pytest.raises(DataError, match="t0"):
        load_stream(path)


def test_declared_size_mismatch(tmp_path):
    task = make_vector_task("t0")

    def lie_about_size(rows):
        rows[0]["splits"]["train"]["size"] = 999

    path = _write_stream(tmp_path, [task], boundary=1, mutate_rows=lie_about_size)
    with pytest.raises(DataError, match="declares 999"):
        load_stream(path)


def test_boundary_over_row_count_rejected(tmp_path):
    task = make_vector_task("t0")
    rows = [write_task_to_dir(task, tmp_path / task.id)]
    manifest_path = tmp_path / "bad.manifest"
    header = {"format": "taskstream-manifest", "version": 1, "boundary": 5}
    lines = [json.dumps(header)] + [json.dumps(r) for r in rows]
    manifest_path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match="boundary 5 invalid"):
        load_stream(manifest_path)


def test_years_must_be_non_decreasing(tmp_path):
    tasks = [
        make_vector_task("t0", year=2005),
        make_vector_task("t1", seed=1, year=2003),
    ]
    path = _write_stream(tmp_path, tasks, boundary=2)
    with pytest.raises(DataError, match="non-decreasing"):
        load_stream(path)


def test_missing_manifest(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_stream(tmp_path / "nope.manifest")


def test_corrupt_manifest(tmp_path):
    path = tmp_path / "bad.manifest"
    path.write_text("{not json\n")
    with pytest.raises(DataError, match="JSON"):
        load_stream(path)


def test_meta_test_rows_must_be_suffix(tmp_path):
    tasks = [make_vector_task(f"t{i}", seed=i, year=2000 + i) for i in range(3)]
    rows = [write_task_to_dir(t, tmp_path / t.id) for t in tasks]
    rows[0]["meta_test"] = True
    rows[1]["meta_test"] = False
    rows[2]["meta_test"] = True
    header = {"format": "taskstream-manifest", "version": 1}
    path = tmp_path / "stream.manifest"
    path.write_text("\n".join([json.dumps(header)] + [json.dumps(r) for r in rows]) + "\n")
    with pytest.raises(DataError, match="suffix"):
        load_stream(path)


def test_short_table_shape():
    rows = short_stream_rows()
    assert len(rows) == 29
    mnist = [r for r in rows if r["name"] == "MNIST"]
    assert len(mnist) == 2  # repeated task
    assert mnist[0] == {
        "year": 2004,
        "name": "MNIST",
        "kind": "C",
        "domain": "ocr",
        "train_size": 51000,
        "avg_resolution": [28, 28],
    }
    multi = [r for r in rows if r["kind"] == "M"]
    assert [r["name"] for r in multi] == ["Pascal 2007"]

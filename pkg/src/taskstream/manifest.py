"""Stream manifests: line-delimited task records with split file references.

Line 1 is a header object carrying the schema version and the meta-train
boundary; every following line is one task row. Rows also carry a
``meta_test`` flag so the boundary can be cross-checked. Split files are the
prepared-task containers written by the registry, referenced by path relative
to the manifest and verified by content checksum on load.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
from PIL import Image
import io

from .datastore import MAGIC, atomic_write_bytes, iter_records, pack_record, sha256_file
from .errors import DataError
from .streams import Example, Split, Stream, Task, TaskKind

MANIFEST_FORMAT = "taskstream-manifest"
MANIFEST_VERSION = 1


def _decode_example(header: dict[str, Any], blob: bytes) -> Example:
    label = header["label"]
    if isinstance(label, list):
        label = np.asarray(label, dtype=np.int8)
    encoding = header["encoding"]
    if encoding == "png":
        with Image.open(io.BytesIO(blob)) as img:
            arr = np.asarray(img)
        return Example(arr, label)
    if encoding == "f64":
        arr = np.frombuffer(blob, dtype="<f8").reshape(header["shape"]).copy()
        return Example(arr, label)
    raise DataError(f"unknown example encoding {encoding!r}")


def encode_example(example: Example) -> tuple[dict[str, Any], bytes]:
    label = example.label
    if isinstance(label, np.ndarray):
        label = [int(v) for v in label]
    else:
        label = int(label)
    arr = example.input
    if arr.dtype == np.uint8 and arr.ndim in (2, 3):
        img = Image.fromarray(arr)
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return {"encoding": "png", "label": label}, buf.getvalue()
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"encoding": "f64", "label": label, "shape": list(arr.shape)}, arr.tobytes()


def read_split_file(path: Path) -> Split:
    return tuple(_decode_example(header, blob) for header, blob in iter_records(path))


def load_stream(manifest_path: Path) -> Stream:
    """Load a stream from a manifest, verifying checksums and declared sizes."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"manifest not found: {manifest_path}")
    lines = [
        line
        for line in manifest_path.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    if not lines:
        raise DataError(f"manifest {manifest_path} is empty")
    try:
        header = json.loads(lines[0])
        rows = [json.loads(line) for line in lines[1:]]
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {manifest_path} is not valid JSON lines: {exc}") from exc
    if header.get("format") != MANIFEST_FORMAT:
        raise DataError(f"manifest {manifest_path}: unrecognized header {header!r}")
    if int(header.get("version", -1)) != MANIFEST_VERSION:
        raise DataError(
            f"manifest {manifest_path}: unsupported version {header.get('version')}"
        )
    if not rows:
        raise DataError(f"manifest {manifest_path} has no task rows")

    declared_boundary = header.get("boundary")
    flags = [bool(row.get("meta_test", False)) for row in rows]
    if any(flags):
        first_test = flags.index(True)
        if not all(flags[first_test:]):
            raise DataError(
                f"manifest {manifest_path}: meta_test rows must form a suffix"
            )
        boundary = first_test
    else:
        boundary = len(rows)
    if declared_boundary is not None:
        declared_boundary = int(declared_boundary)
        if not 0 < declared_boundary <= len(rows):
            raise DataError(
                f"manifest {manifest_path}: boundary {declared_boundary} invalid "
                f"for {len(rows)} rows"
            )
        if any(flags) and declared_boundary != boundary:
            raise DataError(
                f"manifest {manifest_path}: header boundary {declared_boundary} "
                f"disagrees with meta_test flags ({boundary})"
            )
        boundary = declared_boundary
    if boundary == 0:
        raise DataError(f"manifest {manifest_path}: meta-train portion is empty")

    tasks = []
    last_year = None
    for row in rows:
        task = _load_task_row(row, manifest_path.parent)
        if last_year is not None and task.year < last_year:
            raise DataError(
                f"manifest {manifest_path}: years must be non-decreasing "
                f"(task {task.id} has year {task.year} after {last_year})"
            )
        last_year = task.year
        tasks.append(task)
    stream = Stream(tasks=tuple(tasks), boundary=boundary, source=str(manifest_path))
    stream.validate_tasks()
    return stream


def _load_task_row(row: dict[str, Any], base_dir: Path) -> Task:
    required = ("id", "name", "year", "kind", "domain", "num_classes", "splits")
    missing = [key for key in required if key not in row]
    if missing:
        raise DataError(f"manifest row {row.get('id', '?')!r} missing fields {missing}")
    task_id = row["id"]
    splits: dict[str, Split] = {}
    for role in ("train", "val", "test"):
        ref = row["splits"].get(role)
        if ref is None:
            raise DataError(f"task {task_id}: manifest row lacks a {role} split")
        path = base_dir / ref["path"]
        if not path.exists():
            raise DataError(f"task {task_id}: split file missing: {path}")
        actual = sha256_file(path)
        if actual != ref["sha256"]:
            raise DataError(
                f"task {task_id}: checksum mismatch for {path} "
                f"(expected {ref['sha256']}, got {actual})"
            )
        examples = read_split_file(path)
        declared = ref.get("size")
        if declared is not None and len(examples) != int(declared):
            raise DataError(
                f"task {task_id}: {role} split has {len(examples)} examples, "
                f"manifest declares {declared}"
            )
        splits[role] = examples
    res = row.get("avg_resolution", (0, 0))
    return Task(
        id=task_id,
        name=row["name"],
        year=int(row["year"]),
        domain=row["domain"],
        kind=TaskKind.parse(row["kind"]),
        num_classes=int(row["num_classes"]),
        train=splits["train"],
        val=splits["val"],
        test=splits["test"],
        avg_resolution=(int(res[0]), int(res[1])),
    )


def write_split_file(path: Path, examples: Split) -> str:
    """Write one split container and return its sha256 hex digest."""
    records = [pack_record(*encode_example(ex)) for ex in examples]
    atomic_write_bytes(Path(path), MAGIC + b"".join(records))
    return sha256_file(Path(path))


def write_manifest(path: Path, tasks_rows: list[dict[str, Any]], boundary: int) -> None:
    header = {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "boundary": boundary}
    lines = [json.dumps(header, sort_keys=True)]
    for i, row in enumerate(tasks_rows):
        row = dict(row)
        row["meta_test"] = i >= boundary
        lines.append(json.dumps(row, sort_keys=True))
    atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))


def write_task_to_dir(task: Task, out_dir: Path) -> dict[str, Any]:
    """Persist a task's splits under ``out_dir`` and return its manifest row."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    split_refs = {}
    for role in ("train", "val", "test"):
        filename = f"{role}.records"
        digest = write_split_file(out_dir / filename, task.split(role))
        split_refs[role] = {
            "path": f"{out_dir.name}/{filename}",
            "sha256": digest,
            "size": len(task.split(role)),
        }
    return {
        "id": task.id,
        "name": task.name,
        "year": task.year,
        "kind": task.kind.value,
        "domain": task.domain,
        "num_classes": task.num_classes,
        "avg_resolution": list(task.avg_resolution),
        "splits": split_refs,
    }


def short_stream_rows() -> list[dict[str, Any]]:
    """The packaged SHORT-stream table (year, name, kind, domain, size, resolution)."""
    text = resources.files("taskstream").joinpath("data/short_stream.json").read_text()
    return json.loads(text)

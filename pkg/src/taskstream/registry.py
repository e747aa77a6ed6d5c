"""Dataset ingestion: fetch, verify, extract, deduplicate and split raw data.

A descriptor names the member files of one dataset (with per-member md5s and
mirror URLs), an extraction recipe, and a split recipe. ``fetch`` is
idempotent and fails over across mirrors; ``prepare`` removes exact duplicate
inputs before splitting so the three splits are disjoint, then persists the
task in the record-container format the manifest loader consumes. Multiple
descriptors may be fetched or prepared concurrently since every cache write
is write-temp-then-rename.
"""

from __future__ import annotations

import bz2
import gzip
import hashlib
import json
import struct
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from .datastore import atomic_write_bytes
from .errors import ConfigError, DataError
from .manifest import write_manifest, write_task_to_dir
from .streams import Example, Task, TaskKind

DOWNLOAD_TIMEOUT = 60.0


@dataclass(frozen=True)
class SplitRecipe:
    """How raw examples become train/val/test.

    mode "fractions" shuffles the whole pool and slices it; mode
    "source_test" keeps the source's test examples as the test split and
    carves the validation split out of the source train pool.
    """

    mode: str = "fractions"
    train_fraction: float = 0.70
    val_fraction: float = 0.15
    test_fraction: float = 0.15
    seed: int = 0

    def validate(self) -> None:
        if self.mode not in ("fractions", "source_test"):
            raise ConfigError(f"unknown split recipe mode {self.mode!r}")
        if self.mode == "fractions":
            total = self.train_fraction + self.val_fraction + self.test_fraction
            if abs(total - 1.0) > 1e-9:
                raise ConfigError(f"split fractions sum to {total}, expected 1")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class DatasetDescriptor:
    id: str
    name: str
    year: int
    domain: str
    kind: TaskKind
    num_classes: int
    source_urls: tuple[str, ...]
    checksum: str
    license_note: str
    extraction_recipe: str
    recipe_params: dict[str, Any]
    split_recipe: SplitRecipe
    label_map: dict[str, int] | None = None

    def validate(self) -> None:
        if not self.checksum:
            raise ConfigError(f"descriptor {self.id}: checksum must be nonempty")
        if not self.source_urls:
            raise ConfigError(f"descriptor {self.id}: needs at least one source URL")
        self.split_recipe.validate()
        if self.label_map is not None:
            indices = sorted(self.label_map.values())
            if indices != list(range(len(indices))):
                raise ConfigError(
                    f"descriptor {self.id}: label_map indices must be contiguous from 0"
                )

    @property
    def members(self) -> list[dict[str, str]]:
        return list(self.recipe_params.get("members", ()))


def _descriptor_from_dict(data: dict[str, Any]) -> DatasetDescriptor:
    recipe = data.get("split_recipe", {})
    descriptor = DatasetDescriptor(
        id=data["id"],
        name=data.get("name", data["id"]),
        year=int(data.get("year", 0)),
        domain=data.get("domain", "unknown"),
        kind=TaskKind.parse(data.get("kind", "C")),
        num_classes=int(data["num_classes"]),
        source_urls=tuple(data["source_urls"]),
        checksum=str(data["checksum"]),
        license_note=data.get("license_note", ""),
        extraction_recipe=data["extraction_recipe"],
        recipe_params=dict(data.get("recipe_params", {})),
        split_recipe=SplitRecipe(
            mode=recipe.get("mode", "fractions"),
            train_fraction=float(recipe.get("train_fraction", 0.70)),
            val_fraction=float(recipe.get("val_fraction", 0.15)),
            test_fraction=float(recipe.get("test_fraction", 0.15)),
            seed=int(recipe.get("seed", 0)),
        ),
        label_map=data.get("label_map"),
    )
    descriptor.validate()
    return descriptor


def load_descriptors(path: Path | None = None) -> dict[str, DatasetDescriptor]:
    """Load the checked-in descriptor list (or one supplied by path)."""
    if path is None:
        text = resources.files("taskstream").joinpath("data/descriptors.yaml").read_text()
    else:
        text = Path(path).read_text(encoding="utf-8")
    entries = yaml.safe_load(text) or []
    descriptors = {}
    for entry in entries:
        descriptor = _descriptor_from_dict(entry)
        if descriptor.id in descriptors:
            raise ConfigError(f"duplicate descriptor id {descriptor.id!r}")
        descriptors[descriptor.id] = descriptor
    return descriptors


def combined_checksum(members: list[dict[str, str]]) -> str:
    lines = "".join(f"{m['name']}:{m['md5']}\n" for m in sorted(members, key=lambda m: m["name"]))
    return hashlib.sha256(lines.encode("utf-8")).hexdigest()


def _md5_file(path: Path) -> str:
    digest = hashlib.md5()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _archive_dir(descriptor: DatasetDescriptor, cache_dir: Path) -> Path:
    return Path(cache_dir) / "archives" / descriptor.id


def _members_valid(descriptor: DatasetDescriptor, target: Path) -> bool:
    for member in descriptor.members:
        path = target / member["name"]
        if not path.exists() or _md5_file(path) != member["md5"]:
            return False
    return True


def fetch(descriptor: DatasetDescriptor, cache_dir: Path) -> Path:
    """Download the descriptor's member files into the cache; idempotent.

    A cached archive that already matches every checksum is returned without
    touching the network. Mirrors are tried in order on download failures;
    checksum mismatches are fatal and name the descriptor.
    """
    descriptor.validate()
    if not descriptor.members:
        raise ConfigError(f"descriptor {descriptor.id}: recipe_params.members is empty")
    target = _archive_dir(descriptor, cache_dir)
    target.mkdir(parents=True, exist_ok=True)

    if not _members_valid(descriptor, target):
        for member in descriptor.members:
            path = target / member["name"]
            if path.exists() and _md5_file(path) == member["md5"]:
                continue
            _download_member(descriptor, member, path)

    actual_members = [
        {"name": m["name"], "md5": _md5_file(target / m["name"])} for m in descriptor.members
    ]
    actual = combined_checksum(actual_members)
    if actual != descriptor.checksum:
        raise DataError(
            f"descriptor {descriptor.id}: archive checksum mismatch "
            f"(expected {descriptor.checksum}, got {actual})"
        )
    return target


def _download_member(
    descriptor: DatasetDescriptor, member: dict[str, str], path: Path
) -> None:
    errors = []
    for base in descriptor.source_urls:
        url = base + member["name"] if base.endswith("/") else f"{base}/{member['name']}"
        try:
            with urllib.request.urlopen(url, timeout=DOWNLOAD_TIMEOUT) as response:
                data = response.read()
        except (urllib.error.URLError, OSError) as exc:
            errors.append(f"{url}: {exc}")
            continue
        actual = hashlib.md5(data).hexdigest()
        if actual != member["md5"]:
            raise DataError(
                f"descriptor {descriptor.id}: member {member['name']} checksum "
                f"mismatch (expected {member['md5']}, got {actual})"
            )
        atomic_write_bytes(path, data)
        return
    raise DataError(
        f"descriptor {descriptor.id}: could not download {member['name']} from any "
        f"mirror (retryable): {'; '.join(errors)}"
    )


# ---------------------------------------------------------------------------
# Extraction recipes
# ---------------------------------------------------------------------------

RawExample = tuple[np.ndarray, Any, str]  # (input, label, source split tag)


def _parse_idx(data: bytes) -> np.ndarray:
    if len(data) < 4:
        raise DataError("idx file too short")
    zero1, zero2, dtype_code, ndim = struct.unpack(">BBBB", data[:4])
    if zero1 != 0 or zero2 != 0 or dtype_code != 0x08:
        raise DataError("unsupported idx header (expected unsigned byte data)")
    dims = struct.unpack(f">{ndim}I", data[4 : 4 + 4 * ndim])
    offset = 4 + 4 * ndim
    count = int(np.prod(dims))
    arr = np.frombuffer(data, dtype=np.uint8, count=count, offset=offset)
    return arr.reshape(dims)


def _extract_mnist_idx(descriptor: DatasetDescriptor, archive: Path) -> list[RawExample]:
    by_name = {m["name"]: archive / m["name"] for m in descriptor.members}

    def load_pair(images_name: str, labels_name: str, tag: str) -> list[RawExample]:
        images = _parse_idx(gzip.decompress(by_name[images_name].read_bytes()))
        labels = _parse_idx(gzip.decompress(by_name[labels_name].read_bytes()))
        if len(images) != len(labels):
            raise DataError(f"descriptor {descriptor.id}: image/label count mismatch")
        return [(images[i], int(labels[i]), tag) for i in range(len(images))]

    out = load_pair("train-images-idx3-ubyte.gz", "train-labels-idx1-ubyte.gz", "train")
    out += load_pair("t10k-images-idx3-ubyte.gz", "t10k-labels-idx1-ubyte.gz", "test")
    return out


def _extract_usps_libsvm(descriptor: DatasetDescriptor, archive: Path) -> list[RawExample]:
    def load_file(name: str, tag: str) -> list[RawExample]:
        text = bz2.decompress((archive / name).read_bytes()).decode("ascii")
        examples = []
        for line in text.splitlines():
            parts = line.split()
            if not parts:
                continue
            label = int(float(parts[0])) - 1  # libsvm labels are 1-based
            pixels = np.zeros(256, dtype=np.float64)
            for item in parts[1:]:
                key, value = item.split(":")
                pixels[int(key) - 1] = float(value)
            image = ((pixels.reshape(16, 16) + 1.0) * 127.5).clip(0, 255).astype(np.uint8)
            examples.append((image, label, tag))
        return examples

    return load_file("usps.bz2", "train") + load_file("usps.t.bz2", "test")


def _extract_npz_images(descriptor: DatasetDescriptor, archive: Path) -> list[RawExample]:
    """Generic recipe: one .npz member with images, labels and optional split tags."""
    members = descriptor.members
    if len(members) != 1:
        raise DataError(f"descriptor {descriptor.id}: npz recipe expects one member")
    with np.load(archive / members[0]["name"]) as data:
        images = data["images"]
        labels = data["labels"]
        tags = data["source_split"] if "source_split" in data else None
    out = []
    for i in range(len(images)):
        tag = str(tags[i]) if tags is not None else "train"
        label = labels[i] if labels.ndim > 1 else int(labels[i])
        out.append((images[i], label, tag))
    return out


RECIPES: dict[str, Callable[[DatasetDescriptor, Path], list[RawExample]]] = {
    "mnist_idx": _extract_mnist_idx,
    "usps_libsvm": _extract_usps_libsvm,
    "npz_images": _extract_npz_images,
}


# ---------------------------------------------------------------------------
# Preparation: dedup, split, persist
# ---------------------------------------------------------------------------


def _content_key(array: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(array)
    digest = hashlib.sha256()
    digest.update(str(arr.dtype).encode())
    digest.update(str(arr.shape).encode())
    digest.update(arr.tobytes())
    return digest.digest()


def _dedup(raw: list[RawExample]) -> list[RawExample]:
    seen: set[bytes] = set()
    out = []
    for item in raw:
        key = _content_key(item[0])
        if key in seen:
            continue
        seen.add(key)
        out.append(item)
    return out


def _split_examples(
    raw: list[RawExample], recipe: SplitRecipe
) -> dict[str, list[RawExample]]:
    rng = np.random.default_rng(recipe.seed)
    if recipe.mode == "source_test":
        test = [r for r in raw if r[2] == "test"]
        pool = [r for r in raw if r[2] != "test"]
        if not test:
            raise DataError("source_test split recipe found no source test examples")
        perm = rng.permutation(len(pool))
        n_val = int(len(pool) * recipe.val_fraction)
        val_idx = set(perm[:n_val].tolist())
        train = [pool[i] for i in range(len(pool)) if i not in val_idx]
        val = [pool[i] for i in range(len(pool)) if i in val_idx]
        return {"train": train, "val": val, "test": test}
    perm = rng.permutation(len(raw))
    n_train = int(len(raw) * recipe.train_fraction)
    n_val = int(len(raw) * recipe.val_fraction)
    train = [raw[i] for i in perm[:n_train]]
    val = [raw[i] for i in perm[n_train : n_train + n_val]]
    test = [raw[i] for i in perm[n_train + n_val :]]
    return {"train": train, "val": val, "test": test}


def _avg_resolution(raw: list[RawExample]) -> tuple[int, int]:
    if raw and raw[0][0].ndim >= 2:
        heights = int(np.mean([r[0].shape[0] for r in raw]))
        widths = int(np.mean([r[0].shape[1] for r in raw]))
        return heights, widths
    return (0, 0)


def prepared_dir(descriptor_id: str, cache_dir: Path) -> Path:
    return Path(cache_dir) / "prepared" / descriptor_id


def prepare(descriptor: DatasetDescriptor, cache_dir: Path) -> tuple[Task, dict[str, Any]]:
    """Extract, dedup, split and persist one dataset; returns (task, manifest row).

    Deterministic given the archive bytes and the split recipe seed. Exact
    duplicate inputs are removed before splitting, so a record appearing in
    two source splits lands in exactly one prepared split.
    """
    if descriptor.extraction_recipe not in RECIPES:
        raise ConfigError(
            f"descriptor {descriptor.id}: unknown extraction recipe "
            f"{descriptor.extraction_recipe!r}"
        )
    archive = fetch(descriptor, cache_dir)
    try:
        raw = RECIPES[descriptor.extraction_recipe](descriptor, archive)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"descriptor {descriptor.id}: extraction failed: {exc}") from exc
    if not raw:
        raise DataError(f"descriptor {descriptor.id}: extraction produced no examples")

    raw = _dedup(raw)
    _check_classes(descriptor, raw)
    splits = _split_examples(raw, descriptor.split_recipe)

    def to_examples(items: list[RawExample]):
        return tuple(Example(item[0], item[1]) for item in items)

    task = Task(
        id=descriptor.id,
        name=descriptor.name,
        year=descriptor.year,
        domain=descriptor.domain,
        kind=descriptor.kind,
        num_classes=descriptor.num_classes,
        train=to_examples(splits["train"]),
        val=to_examples(splits["val"]),
        test=to_examples(splits["test"]),
        avg_resolution=_avg_resolution(raw),
    )
    task.validate(check_disjoint=False)  # dedup above guarantees disjointness

    out_dir = prepared_dir(descriptor.id, cache_dir)
    row = write_task_to_dir(task, out_dir)
    meta = dict(row)
    meta["descriptor_checksum"] = descriptor.checksum
    atomic_write_bytes(
        out_dir / "metadata.json", json.dumps(meta, sort_keys=True, indent=2).encode()
    )
    return task, row


def _check_classes(descriptor: DatasetDescriptor, raw: list[RawExample]) -> None:
    if descriptor.kind is not TaskKind.SINGLE_LABEL:
        return
    counts = np.zeros(descriptor.num_classes, dtype=int)
    for _, label, _ in raw:
        if not 0 <= int(label) < descriptor.num_classes:
            raise DataError(
                f"descriptor {descriptor.id}: label {label} outside "
                f"[0, {descriptor.num_classes})"
            )
        counts[int(label)] += 1
    empty = np.nonzero(counts < 3)[0]
    if empty.size:
        raise DataError(
            f"descriptor {descriptor.id}: classes {empty.tolist()} have fewer than "
            "3 examples after deduplication"
        )


def build_manifest(
    cache_dir: Path,
    descriptor_ids: list[str],
    manifest_path: Path,
    boundary: int,
    descriptors: dict[str, DatasetDescriptor] | None = None,
) -> None:
    """Assemble a loadable manifest from prepared tasks, in the given order."""
    rows = []
    for descriptor_id in descriptor_ids:
        meta_path = prepared_dir(descriptor_id, cache_dir) / "metadata.json"
        if not meta_path.exists():
            raise DataError(
                f"task {descriptor_id!r} is not prepared (missing {meta_path})"
            )
        meta = json.loads(meta_path.read_text())
        row = {k: v for k, v in meta.items() if k != "descriptor_checksum"}
        for role in ("train", "val", "test"):
            row["splits"][role]["path"] = f"prepared/{descriptor_id}/{role}.records"
        rows.append(row)
    write_manifest(Path(manifest_path), rows, boundary)

"""Length-prefixed record container and atomic file writes.

The same container format backs prepared task splits (registry) and any other
record blobs that need a framework-neutral on-disk form. A file is the magic
string followed by records; each record is a 4-byte big-endian length and the
payload. Payloads here are a JSON header (4-byte length prefix, sorted keys)
followed by an opaque blob, so readers can skip blobs they do not understand.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Any, Iterator

from .errors import DataError

MAGIC = b"TSREC001"


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write ``data`` to ``path`` via a temp file + rename (atomic on POSIX)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def pack_record(header: dict[str, Any], blob: bytes = b"") -> bytes:
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = struct.pack(">I", len(head)) + head + blob
    return struct.pack(">I", len(payload)) + payload


def unpack_record(payload: bytes) -> tuple[dict[str, Any], bytes]:
    if len(payload) < 4:
        raise DataError("truncated record payload")
    (hlen,) = struct.unpack(">I", payload[:4])
    if len(payload) < 4 + hlen:
        raise DataError("truncated record header")
    header = json.loads(payload[4 : 4 + hlen].decode("utf-8"))
    return header, payload[4 + hlen :]


def write_records(path: Path, records: list[bytes]) -> None:
    atomic_write_bytes(Path(path), MAGIC + b"".join(records))


def iter_records(path: Path) -> Iterator[tuple[dict[str, Any], bytes]]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read record file {path}: {exc}") from exc
    if not data.startswith(MAGIC):
        raise DataError(f"{path} is not a record container (bad magic)")
    pos = len(MAGIC)
    while pos < len(data):
        if pos + 4 > len(data):
            raise DataError(f"{path}: truncated record length at offset {pos}")
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        pos += 4
        if pos + length > len(data):
            raise DataError(f"{path}: truncated record at offset {pos}")
        yield unpack_record(data[pos : pos + length])
        pos += length


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()

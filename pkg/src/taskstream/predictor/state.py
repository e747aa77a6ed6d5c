"""Predictor parameter state and its versioned binary serialization.

The byte layout is deterministic: a magic string, a JSON header with sorted
keys describing the arch echo and every array (name, shape, dtype), then the
raw little-endian array bytes concatenated in header order. Equal states
serialize to equal bytes, which the checkpoint/resume differential test
relies on.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError
from .config import ArchSpec
from .network import Params

MAGIC = b"TSPS0001"


@dataclass
class PredictorState:
    """Backbone parameters plus one head per trained task id."""

    arch: ArchSpec
    resolution: int
    params: Params
    heads: dict[str, Params] = field(default_factory=dict)

    @property
    def feature_dim(self) -> int:
        return self.arch.feature_dim

    def copy(self) -> "PredictorState":
        return PredictorState(
            arch=self.arch,
            resolution=self.resolution,
            params={k: v.copy() for k, v in self.params.items()},
            heads={t: {k: v.copy() for k, v in h.items()} for t, h in self.heads.items()},
        )

    def head_for(self, task_id: str) -> Params:
        if task_id not in self.heads:
            raise DataError(f"state has no head for task {task_id!r}")
        return self.heads[task_id]

    def allclose(self, other: "PredictorState") -> bool:
        if set(self.params) != set(other.params) or set(self.heads) != set(other.heads):
            return False
        return all(np.array_equal(self.params[k], other.params[k]) for k in self.params) and all(
            np.array_equal(self.heads[t][k], other.heads[t][k])
            for t in self.heads
            for k in self.heads[t]
        )


def _flatten_arrays(state: PredictorState) -> dict[str, np.ndarray]:
    arrays = {f"params/{name}": arr for name, arr in state.params.items()}
    for task_id, head in state.heads.items():
        if "/" in task_id:
            raise DataError(f"task id {task_id!r} may not contain '/'")
        for name, arr in head.items():
            arrays[f"heads/{task_id}/{name}"] = arr
    return arrays


def serialize_state(state: PredictorState) -> bytes:
    arrays = _flatten_arrays(state)
    names = sorted(arrays)
    header = {
        "version": 1,
        "arch": state.arch.to_json(),
        "resolution": state.resolution,
        "arrays": [
            {
                "name": name,
                "shape": list(arrays[name].shape),
                "dtype": str(arrays[name].dtype),
            }
            for name in names
        ],
    }
    head_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC, struct.pack(">I", len(head_bytes)), head_bytes]
    for name in names:
        chunks.append(np.ascontiguousarray(arrays[name]).astype("<f8").tobytes())
    return b"".join(chunks)


def deserialize_state(data: bytes) -> PredictorState:
    if not data.startswith(MAGIC):
        raise DataError("not a predictor state blob (bad magic)")
    pos = len(MAGIC)
    (hlen,) = struct.unpack(">I", data[pos : pos + 4])
    pos += 4
    header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    if header["version"] != 1:
        raise DataError(f"unsupported predictor state version {header['version']}")
    params: Params = {}
    heads: dict[str, Params] = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        arr = np.frombuffer(data[pos : pos + nbytes], dtype="<f8").reshape(shape).copy()
        pos += nbytes
        name = entry["name"]
        if name.startswith("params/"):
            params[name[len("params/") :]] = arr
        elif name.startswith("heads/"):
            _, task_id, pname = name.split("/", 2)
            heads.setdefault(task_id, {})[pname] = arr
        else:
            raise DataError(f"unknown array name {name!r} in predictor state")
    return PredictorState(
        arch=ArchSpec.from_json(header["arch"]),
        resolution=int(header["resolution"]),
        params=params,
        heads=heads,
    )

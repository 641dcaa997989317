"""Versioned binary checkpoints.

Layout: 8-byte magic, uint32 format version, uint64 header length, a JSON
header with sorted keys, then the arrays as raw little-endian float64 in
header order. No timestamps or other run-dependent bytes are written, so
saving the same state twice yields identical files.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"VGCKPT\x00\x01"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    arrays: dict[str, np.ndarray]
    meta: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    def group(self, prefix: str) -> dict[str, np.ndarray]:
        """Arrays under ``prefix`` with the prefix stripped."""
        n = len(prefix)
        return {k[n:]: v for k, v in self.arrays.items() if k.startswith(prefix)}


def to_bytes(ckpt: Checkpoint) -> bytes:
    names = sorted(ckpt.arrays)
    table = []
    blobs = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(ckpt.arrays[name], dtype="<f8")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob = arr.tobytes()
        blobs.append(blob)
        offset += len(blob)
    header = {"config": ckpt.config, "meta": ckpt.meta, "arrays": table}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return MAGIC + struct.pack("<IQ", ckpt.version, len(hbytes)) + hbytes + b"".join(blobs)


def from_bytes(raw: bytes, expect_version: int = FORMAT_VERSION) -> Checkpoint:
    if raw[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != expect_version:
        raise CheckpointError(f"checkpoint format version {version}, expected {expect_version}")
    header = json.loads(raw[20:20 + hlen])
    body = memoryview(raw)[20 + hlen:]
    arrays = {}
    for ent in header["arrays"]:
        count = int(np.prod(ent["shape"], dtype=np.int64))
        start = ent["offset"]
        arr = np.frombuffer(body[start:start + 8 * count], dtype="<f8").reshape(ent["shape"])
        arrays[ent["name"]] = arr.astype(np.float64)
    return Checkpoint(header["config"], arrays, header["meta"], version)


def save(ckpt: Checkpoint, path) -> None:
    """Atomic write: temp file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(to_bytes(ckpt))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}")
    return from_bytes(path.read_bytes())

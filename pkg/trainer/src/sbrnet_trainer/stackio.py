"""Reader/writer for the simulator's stack container and manifests.

The container is deliberately trivial so this package carries no dependency
on the simulator: magic "SBRB", version byte 0x01, little-endian uint32
header length, UTF-8 JSON header with at least dtype/shape/axes, then
row-major little-endian float32 payload.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

MAGIC = b"SBRB"
VERSION = 1


class StackFormatError(Exception):
    pass


def read_stack(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 9:
        raise StackFormatError(f"{path}: too short")
    if raw[:4] != MAGIC:
        raise StackFormatError(f"{path}: bad magic {raw[:4]!r}")
    if raw[4] != VERSION:
        raise StackFormatError(f"{path}: unsupported version {raw[4]}")
    header_len = int(np.frombuffer(raw[5:9], dtype="<u4")[0])
    header = json.loads(raw[9 : 9 + header_len].decode("utf-8"))
    shape = tuple(int(s) for s in header["shape"])
    expected = 4 * int(np.prod(shape))
    payload = raw[9 + header_len : 9 + header_len + expected]
    if len(payload) < expected:
        raise StackFormatError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype="<f4").reshape(shape).astype(np.float32), header


def write_stack(path: str | Path, data: np.ndarray, header: dict) -> None:
    header = dict(header)
    header["dtype"] = "f32le"
    header["shape"] = list(data.shape)
    header.setdefault("axes", {2: "y,x", 3: "z,y,x"}[data.ndim])
    header_bytes = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(bytes([VERSION]))
        f.write(np.uint32(len(header_bytes)).astype("<u4").tobytes())
        f.write(header_bytes)
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())
        f.flush()
        os.fsync(f.fileno())


def load_manifest(path: str | Path) -> tuple[list[dict], Path]:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    records = doc["records"] if isinstance(doc, dict) else doc
    return records, path.parent

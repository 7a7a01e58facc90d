"""PLACEMB1 writer/reader.

Independent implementation of the format consumed by the detection
pipeline: 8-byte magic, little-endian u32 count and dim, then count*dim
float32 values row-major. An optional JSON sidecar lives at <path>.json.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

EMB_MAGIC = b"PLACEMB1"


class ExportFormatError(ValueError):
    pass


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_embeddings(path, matrix, sidecar: dict | None = None):
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ExportFormatError(f"embeddings must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ExportFormatError("embeddings contain non-finite values")
    path = Path(path)
    with open(path, "wb") as f:
        f.write(EMB_MAGIC)
        f.write(struct.pack("<II", m.shape[0], m.shape[1]))
        f.write(np.ascontiguousarray(m, dtype="<f4").tobytes())
    if sidecar is not None:
        sidecar_path(path).write_text(json.dumps(sidecar, indent=2))


def read_embeddings(path) -> np.ndarray:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != EMB_MAGIC:
            raise ExportFormatError(f"{path}: bad magic {magic!r}")
        count, dim = struct.unpack("<II", f.read(8))
        payload = f.read(4 * count * dim)
        if len(payload) != 4 * count * dim:
            raise ExportFormatError(f"{path}: truncated payload")
    return np.frombuffer(payload, dtype="<f4").reshape(count, dim).astype(np.float64)

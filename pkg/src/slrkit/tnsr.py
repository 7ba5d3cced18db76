"""TNSR tensor container files.

Layout: bytes 0-3 magic ``TNSR``; byte 4 version (0x01); byte 5 dtype code
(0x01 = little-endian 32-bit float); byte 6 rank; then rank little-endian
uint32 dims; then the row-major payload. Used for checkpoints, corpus
frames and activation dumps.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"TNSR"
VERSION = 0x01
DTYPE_F32 = 0x01

_MAX_RANK = 255


def write_tnsr(path: str | Path, array: np.ndarray) -> None:
    """Write *array* as a float32 TNSR file (values are cast if needed)."""
    arr = np.ascontiguousarray(array, dtype=np.float32)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim > _MAX_RANK:
        raise FormatError(f"rank {arr.ndim} exceeds TNSR maximum {_MAX_RANK}")
    header = MAGIC + struct.pack("<BBB", VERSION, DTYPE_F32, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}I", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dims)
        fh.write(arr.astype("<f4", copy=False).tobytes())


def read_tnsr(path: str | Path) -> np.ndarray:
    """Read a TNSR file back into a float32 array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 7 or blob[:4] != MAGIC:
        raise FormatError(f"{path}: not a TNSR file")
    version, dtype_code, rank = struct.unpack("<BBB", blob[4:7])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported TNSR version {version}")
    if dtype_code != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype code {dtype_code}")
    offset = 7 + 4 * rank
    if len(blob) < offset:
        raise FormatError(f"{path}: truncated dimension table")
    shape = struct.unpack(f"<{rank}I", blob[7:offset])
    count = 1
    for d in shape:
        count *= d
    payload = blob[offset:]
    if len(payload) != 4 * count:
        raise FormatError(
            f"{path}: payload holds {len(payload) // 4} values, shape needs {count}"
        )
    data = np.frombuffer(payload, dtype="<f4").astype(np.float32)
    return data.reshape(shape)

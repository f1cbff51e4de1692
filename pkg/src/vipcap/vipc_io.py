"""File formats: the VIPC feature container and jsonl helpers.

VIPC layout: 4-byte magic ``VIPC``, u32 version (=1), u32 rows, u32 dim,
then row-major little-endian float32 data. The same container carries
precomputed patch features and datastore embeddings.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

VIPC_MAGIC = b"VIPC"
VIPC_VERSION = 1
_HEADER = struct.Struct("<4sIII")


def write_vipc(path, matrix) -> None:
    """Write a 2-D float array as a VIPC container."""
    arr = np.asarray(matrix, dtype=np.float32)
    if arr.ndim != 2:
        raise DataError(f"VIPC container holds 2-D matrices, got shape {arr.shape}")
    rows, dim = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(VIPC_MAGIC, VIPC_VERSION, rows, dim))
        fh.write(arr.astype("<f4", copy=False).tobytes(order="C"))


def read_vipc(path) -> np.ndarray:
    """Read a VIPC container into a float32 (rows, dim) array."""
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read feature file {path}: {exc}") from exc
    return decode_vipc(blob, source=str(path))


def decode_vipc(blob: bytes, source: str = "<bytes>") -> np.ndarray:
    """Decode an in-memory VIPC container."""
    if len(blob) < _HEADER.size:
        raise DataError(f"{source}: truncated VIPC header")
    magic, version, rows, dim = _HEADER.unpack_from(blob)
    if magic != VIPC_MAGIC:
        raise DataError(f"{source}: bad magic {magic!r}, expected {VIPC_MAGIC!r}")
    if version != VIPC_VERSION:
        raise DataError(f"{source}: unsupported VIPC version {version}")
    expected = _HEADER.size + 4 * rows * dim
    if len(blob) != expected:
        raise DataError(
            f"{source}: payload is {len(blob)} bytes, header implies {expected}"
        )
    data = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    return data.reshape(rows, dim).copy()


def looks_like_vipc(blob: bytes) -> bool:
    return blob[:4] == VIPC_MAGIC


def read_jsonl(path) -> list:
    """Read one JSON object per non-empty line."""
    records = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
    return records


def write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

"""Single-file checkpoint container.

Layout: 4-byte magic ``VCKP``, u32 version (=1), u64 manifest length, the
JSON manifest, then a raw data section of named little-endian float32
arrays. The manifest records (name, shape, offset) per array plus the train
config snapshot, step counter, and RNG state, so a checkpoint round-trips
bit-exactly and is self-contained for generation.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

CKPT_MAGIC = b"VCKP"
CKPT_VERSION = 1
_HEADER = struct.Struct("<4sIQ")


@dataclass
class Checkpoint:
    params: dict
    config: dict
    step: int = 0
    rng_state: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(ckpt.params):
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blob = arr.tobytes(order="C")
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "format_version": CKPT_VERSION,
        "params": entries,
        "config": ckpt.config,
        "step": ckpt.step,
        "rng_state": ckpt.rng_state,
        "extra": ckpt.extra,
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, len(manifest_bytes)))
        fh.write(manifest_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> Checkpoint:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise DataError(f"{path}: truncated checkpoint header")
    magic, version, manifest_len = _HEADER.unpack_from(blob)
    if magic != CKPT_MAGIC:
        raise DataError(f"{path}: bad checkpoint magic {magic!r}")
    if version != CKPT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    body = blob[_HEADER.size :]
    if len(body) < manifest_len:
        raise DataError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(body[:manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt manifest ({exc})") from exc
    data = body[manifest_len:]
    params = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(data):
            raise DataError(f"{path}: array {entry['name']!r} overruns data section")
        params[entry["name"]] = (
            np.frombuffer(data, dtype="<f4", count=count, offset=start)
            .reshape(shape)
            .copy()
        )
    return Checkpoint(
        params=params,
        config=manifest["config"],
        step=manifest["step"],
        rng_state=manifest["rng_state"],
        extra=manifest["extra"],
    )

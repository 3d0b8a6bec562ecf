"""Single-file tensor container.

Layout::

    magic      8 bytes  b"DSQ1\\0\\0\\0\\1"
    u64 LE     header length, then UTF-8 JSON metadata
    u64 LE     manifest length, then UTF-8 JSON list of
               {"name", "dtype", "shape", "offset", "nbytes"}
    payload    little-endian raw tensors; offsets are relative to the
               first payload byte

Writes go through a temporary file and ``os.replace`` so an interrupted
save never clobbers the previous checkpoint.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"DSQ1\x00\x00\x00\x01"

_DTYPES = {
    "f64": np.dtype("<f8"),
    "f32": np.dtype("<f4"),
    "i64": np.dtype("<i8"),
    "i32": np.dtype("<i4"),
    "u8": np.dtype("u1"),
}
_TAGS = {(dt.kind, dt.itemsize): tag for tag, dt in _DTYPES.items()}


def _tag(arr: np.ndarray) -> str:
    try:
        return _TAGS[(arr.dtype.kind, arr.dtype.itemsize)]
    except KeyError:
        raise CheckpointError(f"unsupported tensor dtype {arr.dtype}") from None


def save_checkpoint(path, tensors: dict, metadata: dict | None = None) -> None:
    path = Path(path)
    manifest, blobs, offset = [], [], 0
    for name, value in tensors.items():
        arr = np.asarray(value)
        tag = _tag(arr)
        data = np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes()
        manifest.append({"name": name, "dtype": tag, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    man = json.dumps(manifest).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(struct.pack("<Q", len(man)))
        fh.write(man)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict, dict]:
    """Return ``(tensors, metadata)``; tensors keep manifest order."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a dancer checkpoint (bad magic)")
    try:
        pos = 8
        (hlen,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        metadata = json.loads(raw[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        (mlen,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        manifest = json.loads(raw[pos:pos + mlen].decode("utf-8"))
        pos += mlen
        tensors = {}
        for entry in manifest:
            start = pos + entry["offset"]
            dt = _DTYPES[entry["dtype"]]
            arr = np.frombuffer(raw, dtype=dt, count=entry["nbytes"] // dt.itemsize, offset=start)
            tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(dt.newbyteorder("="), copy=True)
    except (struct.error, ValueError, KeyError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    return tensors, metadata

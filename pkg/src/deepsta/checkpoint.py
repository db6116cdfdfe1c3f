"""Binary checkpoint format for named float arrays.

Layout::

    bytes 0..7    magic  b"DSTACKPT"
    bytes 8..15   header length H, unsigned 64-bit little-endian
    next H bytes  UTF-8 JSON header
    remainder     payload: concatenated little-endian float64 values

The header is ``{"version": 1, "dtype": "<f8", "tensors": [...], "meta": {...}}``
where each tensor entry is ``{"name", "shape", "offset", "count"}`` and
``offset``/``count`` are in elements (not bytes) from the payload start.
Tensors appear in insertion order; ``meta`` is free-form JSON.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ArtifactError

MAGIC = b"DSTACKPT"
VERSION = 1


def save_arrays(path: str | Path, arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        offset += a.size
        blobs.append(a.tobytes())
    header = json.dumps({"version": VERSION, "dtype": "<f8", "tensors": entries, "meta": dict(meta or {})},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise ArtifactError(f"{path} is not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    if header.get("version") != VERSION or header.get("dtype") != "<f8":
        raise ArtifactError(f"{path}: unsupported checkpoint version/dtype")
    payload = np.frombuffer(raw, dtype="<f8", offset=16 + hlen)
    arrays = {}
    for e in header["tensors"]:
        chunk = payload[e["offset"]:e["offset"] + e["count"]]
        if chunk.size != e["count"]:
            raise ArtifactError(f"{path}: truncated payload for {e['name']}")
        arrays[e["name"]] = chunk.astype(np.float64).reshape(e["shape"])
    return arrays, header.get("meta", {})

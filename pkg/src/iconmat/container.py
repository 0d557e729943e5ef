"""Flat binary container for named arrays plus a JSON metadata block.

Zip-based formats stamp timestamps into the archive, which breaks
byte-identical round-trips. This container is fully deterministic:
magic, version, header length, canonical JSON header, then raw array
payloads in sorted-name order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError

MAGIC = b"ICMT"
VERSION = 1

_ALLOWED_DTYPES = {"float64", "float32", "int64", "int32", "uint8", "bool"}


def save_container(path, arrays: dict, meta: dict | None = None) -> None:
    """Write named arrays and metadata. Same inputs give the same bytes."""
    entries = []
    payloads = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype.name not in _ALLOWED_DTYPES:
            raise ValidationError(f"unsupported dtype {arr.dtype} for array {name!r}")
        raw = arr.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.name,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        payloads.append(raw)
        offset += len(raw)
    header = {"arrays": entries, "meta": meta or {}}
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for raw in payloads:
            fh.write(raw)


def load_container(path):
    """Read arrays and metadata back. Returns (arrays, meta)."""
    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValidationError(f"{path} is not a container file")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != VERSION:
            raise ValidationError(f"unsupported container version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        ordered = header["arrays"]
        blob = fh.read()
    arrays = {}
    for entry in ordered:
        start = entry["offset"]
        raw = blob[start : start + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return arrays, header["meta"]

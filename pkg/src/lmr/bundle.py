"""Compact bit-exact container: one JSON header line, then raw float64 arrays.

The header lists each array's name, dtype, shape and byte offset into the
payload. Output depends only on the inputs, so identical content always
produces identical bytes.
"""
from __future__ import annotations

import json
import os

import numpy as np

_MAGIC = "LMRB1"


class BundleError(ValueError):
    pass


def write(path, meta, arrays):
    header = {"magic": _MAGIC, "meta": meta, "arrays": []}
    blobs, offset = [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dtype = "<f8" if arr.dtype.kind == "f" else "<i8"
        raw = arr.astype(dtype).tobytes()
        header["arrays"].append({"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset})
        blobs.append(raw)
        offset += len(raw)
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(head)
        for raw in blobs:
            fh.write(raw)
    os.replace(tmp, path)


def read(path):
    """Return ``(meta, {name: array})``; raises :class:`BundleError` on damage."""
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"\n")
    try:
        header = json.loads(data[:end])
    except (ValueError, UnicodeDecodeError):
        raise BundleError(f"{path}: unreadable header") from None
    if end < 0 or not isinstance(header, dict) or header.get("magic") != _MAGIC:
        raise BundleError(f"{path}: not an LMR bundle")
    payload = memoryview(data)[end + 1 :]
    arrays = {}
    for spec in header["arrays"]:
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        start = spec["offset"]
        stop = start + count * dtype.itemsize
        if stop > len(payload):
            raise BundleError(f"{path}: truncated array {spec['name']!r}")
        arr = np.frombuffer(payload[start:stop], dtype=dtype).reshape(spec["shape"])
        arrays[spec["name"]] = arr.astype(np.float64 if dtype.kind == "f" else np.int64)
    return header["meta"], arrays

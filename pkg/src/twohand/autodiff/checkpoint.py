"""Parameter checkpoints.

Layout: the magic ``IWCK1``, a little-endian uint32 giving the manifest
length, the UTF-8 JSON manifest, then the parameter blobs as little-endian
float64 in manifest order. The manifest maps each parameter name to its
shape and byte offset and may carry a free-form ``meta`` object.
"""
from __future__ import annotations

import json
import struct

import numpy as np

MAGIC = b"IWCK1"


def save_checkpoint(path, params, meta=None):
    entries, offset = [], 0
    for name in sorted(params):
        arr = np.asarray(getattr(params[name], "data", params[name]))
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 8
    manifest = json.dumps({"params": entries, "meta": meta or {}}, sort_keys=True,
                          separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(manifest)))
        fh.write(manifest)
        for e in entries:
            arr = np.asarray(getattr(params[e["name"]], "data", params[e["name"]]))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Return ``(arrays, meta)`` where ``arrays`` maps names to float64 arrays."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:5] != MAGIC:
        raise ValueError(f"{path}: not an IWCK1 checkpoint")
    (n,) = struct.unpack("<I", blob[5:9])
    manifest = json.loads(blob[9:9 + n].decode("utf-8"))
    base = 9 + n
    arrays = {}
    for e in manifest["params"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        start = base + e["offset"]
        arrays[e["name"]] = np.frombuffer(blob, dtype="<f8", count=count, offset=start).reshape(e["shape"]).copy()
    return arrays, manifest.get("meta", {})


def assign_parameters(params, arrays):
    missing = sorted(set(params) - set(arrays))
    if missing:
        raise KeyError(f"checkpoint lacks parameters: {missing}")
    for name, p in params.items():
        if arrays[name].shape != p.data.shape:
            raise ValueError(f"{name}: shape {arrays[name].shape} != {p.data.shape}")
        p.data[...] = arrays[name].astype(p.data.dtype)

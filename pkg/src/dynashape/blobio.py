"""Flat float64 blob + JSON sidecar persistence for model and agent parameters."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def save_blob(path, arrays, sidecar: dict) -> None:
    """Write named arrays as one little-endian float64 blob plus a sidecar.

    ``arrays`` is an ordered mapping name -> ndarray. The sidecar records the
    layout (name, shape, offset) so the blob is self-describing.
    """
    path = Path(path)
    layout = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")
        layout.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    path.with_suffix(".bin").write_bytes(b"".join(chunks))
    meta = dict(sidecar)
    meta["layout"] = layout
    meta["total_values"] = offset
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_blob(path):
    """Read back (arrays dict, sidecar dict) written by save_blob."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    flat = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8")
    if flat.size != meta["total_values"]:
        raise ValueError(f"blob {path} has {flat.size} values, sidecar says "
                         f"{meta['total_values']}")
    arrays = {}
    for item in meta["layout"]:
        size = int(np.prod(item["shape"])) if item["shape"] else 1
        chunk = flat[item["offset"]:item["offset"] + size]
        arrays[item["name"]] = chunk.reshape(item["shape"]).copy()
    return arrays, meta

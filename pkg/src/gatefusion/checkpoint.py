"""Checkpoint directories: ``manifest.json`` plus one binary file per parameter.

Tensor file layout (little-endian): magic ``b"GFTN"``, ``u32`` ndim, ``ndim``
``u32`` dimensions, then the values as row-major float64.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"GFTN"


class CheckpointError(IOError):
    pass


def write_tensor(path, arr: np.ndarray):
    arr = np.asarray(arr, dtype="<f8", order="C")
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<I", arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:4] != TENSOR_MAGIC:
        raise CheckpointError(f"{path}: not a tensor file")
    (ndim,) = struct.unpack_from("<I", buf, 4)
    shape = struct.unpack_from(f"<{ndim}I", buf, 8)
    off = 8 + 4 * ndim
    n = int(np.prod(shape)) if ndim else 1
    if len(buf) - off != 8 * n:
        raise CheckpointError(f"{path}: expected {n} values, found {(len(buf) - off) / 8}")
    return np.frombuffer(buf, dtype="<f8", offset=off).reshape(shape).astype(np.float64)


def save_checkpoint(directory, state: dict[str, np.ndarray], manifest: dict):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (name, arr) in enumerate(state.items()):
        fname = f"{i:04d}_{name}.bin"
        write_tensor(d / fname, arr)
        entries.append({"name": name, "file": fname, "shape": list(arr.shape)})
    manifest = dict(manifest, params=entries)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict]:
    d = Path(directory)
    mpath = d / "manifest.json"
    if not mpath.is_file():
        raise CheckpointError(f"no checkpoint manifest at {mpath}")
    manifest = json.loads(mpath.read_text())
    state = {}
    for e in manifest["params"]:
        arr = read_tensor(d / e["file"])
        if list(arr.shape) != e["shape"]:
            raise CheckpointError(f"{e['file']}: shape {arr.shape} disagrees with manifest {e['shape']}")
        state[e["name"]] = arr
    return state, manifest

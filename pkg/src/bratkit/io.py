"""Deterministic binary container used by grid, checkpoint, and label files.

Layout (all integers little-endian uint64, floats little-endian float64):

    magic     8 bytes  b"BRATKIT1"
    meta_len  u64      length of the canonical-JSON metadata block
    meta      bytes    UTF-8 JSON (sorted keys)
    n_arrays  u64
    per array:
        name_len u64, name bytes (UTF-8)
        ndim u64, shape u64*ndim
        payload float64 LE, C order

JSON canonicalization plus fixed field order makes writes byte-identical
across reruns, which the reproducibility contract relies on.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"BRATKIT1"


def write_container(path, meta: dict, arrays: dict) -> None:
    meta_blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(meta_blob)))
        f.write(meta_blob)
        f.write(struct.pack("<Q", len(arrays)))
        for name in sorted(arrays):
            arr = np.ascontiguousarray(arrays[name], dtype="<f8")
            nb = name.encode()
            f.write(struct.pack("<Q", len(nb)))
            f.write(nb)
            f.write(struct.pack("<Q", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())


def read_container(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    with open(path, "rb") as f:
        if f.read(8) != MAGIC:
            raise ValueError(f"{path}: not a bratkit container")
        (meta_len,) = struct.unpack("<Q", f.read(8))
        meta = json.loads(f.read(meta_len).decode())
        (n_arrays,) = struct.unpack("<Q", f.read(8))
        arrays = {}
        for _ in range(n_arrays):
            (name_len,) = struct.unpack("<Q", f.read(8))
            name = f.read(name_len).decode()
            (ndim,) = struct.unpack("<Q", f.read(8))
            shape = struct.unpack(f"<{ndim}Q", f.read(8 * ndim)) if ndim else ()
            count = int(np.prod(shape)) if shape else 1
            arrays[name] = np.frombuffer(
                f.read(8 * count), dtype="<f8").reshape(shape).copy()
    return meta, arrays

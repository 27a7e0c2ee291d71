"""Versioned binary checkpoint container for named parameter arrays.

Layout (all integers little-endian):

    magic           6 bytes  b"MSTOP\\0"
    format version  u32
    param count     u32
    param blocks    name length (u32), utf-8 name, rank (u32),
                    extents (u64 each), payload (little-endian f64)
    adam count      u32      (0 when no optimizer state is stored)
    adam blocks     same block layout; names are "m:<param>", "v:<param>"
                    plus scalars "step", "lr", "beta1", "beta2", "eps"

Scalars are stored as rank-0 blocks.
"""

from __future__ import annotations

import struct

import numpy as np

from .optim import AdamState

MAGIC = b"MSTOP\x00"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


def _write_block(fh, name: str, arr: np.ndarray):
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<I", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<I", arr.ndim))
    for extent in arr.shape:
        fh.write(struct.pack("<Q", extent))
    fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_exact(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint file")
    return data


def _read_block(fh):
    (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
    name = _read_exact(fh, name_len).decode("utf-8")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4))
    shape = tuple(struct.unpack("<Q", _read_exact(fh, 8))[0] for _ in range(rank))
    count = int(np.prod(shape)) if shape else 1
    payload = _read_exact(fh, count * 8)
    arr = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
    return name, arr


def save_checkpoint(path, params: dict, adam: AdamState | None = None):
    """Write named arrays (and optional Adam state) to ``path``."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            _write_block(fh, name, np.asarray(params[name], dtype=np.float64))
        if adam is None:
            fh.write(struct.pack("<I", 0))
            return
        blocks = [("step", np.float64(adam.step)), ("lr", np.float64(adam.lr)),
                  ("beta1", np.float64(adam.beta1)), ("beta2", np.float64(adam.beta2)),
                  ("eps", np.float64(adam.eps))]
        for name in sorted(adam.m):
            blocks.append((f"m:{name}", adam.m[name]))
            blocks.append((f"v:{name}", adam.v[name]))
        fh.write(struct.pack("<I", len(blocks)))
        for name, arr in blocks:
            _write_block(fh, name, np.asarray(arr, dtype=np.float64))


def load_checkpoint(path):
    """Read a checkpoint; returns (params dict, AdamState or None)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointError(f"bad magic bytes {magic!r}; not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint format version {version}, expected {FORMAT_VERSION}")
        (n_params,) = struct.unpack("<I", _read_exact(fh, 4))
        params = {}
        for _ in range(n_params):
            name, arr = _read_block(fh)
            params[name] = arr
        (n_adam,) = struct.unpack("<I", _read_exact(fh, 4))
        if n_adam == 0:
            return params, None
        raw = dict(_read_block(fh) for _ in range(n_adam))
        adam = AdamState(
            lr=float(raw["lr"]), beta1=float(raw["beta1"]), beta2=float(raw["beta2"]),
            eps=float(raw["eps"]), step=int(raw["step"]),
        )
        for name, arr in raw.items():
            if name.startswith("m:"):
                adam.m[name[2:]] = arr
            elif name.startswith("v:"):
                adam.v[name[2:]] = arr
        return params, adam

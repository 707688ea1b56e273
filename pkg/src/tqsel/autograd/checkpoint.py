"""TQCK binary checkpoints: named float32 tensors."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..util import atomic_write_bytes

MAGIC = b"TQCK"
VERSION = 1


def save_tensors(path, tensors: dict) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    atomic_write_bytes(path, b"".join(parts))


def load_tensors(path) -> dict:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a TQCK checkpoint")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    out = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<H", raw, off)
        off += 2
        name = raw[off:off + n].decode("utf-8")
        off += n
        (rank,) = struct.unpack_from("<B", raw, off)
        off += 1
        shape = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        size = int(np.prod(shape)) if rank else 1
        out[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape).copy()
        off += 4 * size
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
    return out


def save_checkpoint(path, model, optimizer=None, meta: dict | None = None) -> None:
    """Weights, Adam moments (``<name>.m``/``<name>.v``) and scalar metadata (``meta.<key>``)."""
    tensors = {}
    for name, p in model.named_parameters():
        tensors[name] = p.data
        if optimizer is not None:
            tensors[f"{name}.m"] = p.m
            tensors[f"{name}.v"] = p.v
    if optimizer is not None:
        tensors["meta.adam_t"] = np.array(optimizer.t)
    for key, value in (meta or {}).items():
        tensors[f"meta.{key}"] = np.array(value)
    save_tensors(path, tensors)


def load_checkpoint(path, model, optimizer=None) -> dict:
    """Restore weights (and moments, if an optimizer is given); returns the meta scalars."""
    tensors = load_tensors(path)
    model.load_state_dict(tensors)
    if optimizer is not None:
        for name, p in model.named_parameters():
            if f"{name}.m" in tensors:
                p.m = tensors[f"{name}.m"].astype(p.dtype)
                p.v = tensors[f"{name}.v"].astype(p.dtype)
        optimizer.t = int(tensors.get("meta.adam_t", 0))
    return {k[5:]: float(v) for k, v in tensors.items() if k.startswith("meta.")}

"""Query/clip semantic embeddings: file ingestion and a hashed bag-of-words stand-in."""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .util import atomic_write_bytes

EMBED_DIM = 512
_HEADER = struct.Struct("<4sII")
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


class EmbeddingFormatError(ValueError):
    pass


def _unit(vector) -> np.ndarray:
    v = np.asarray(vector, dtype=np.float64).reshape(-1)
    if v.shape != (EMBED_DIM,):
        raise EmbeddingFormatError(f"embedding must have {EMBED_DIM} values, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise EmbeddingFormatError("embedding has non-finite values")
    norm = np.linalg.norm(v)
    if norm == 0:
        raise EmbeddingFormatError("cannot normalize a zero embedding")
    # already unit within tolerance: keep values so file round trips are bit-exact
    if abs(norm - 1.0) <= 1e-6:
        return v
    return v / norm


@dataclass(frozen=True)
class QueryEmbedding:
    vector: np.ndarray
    source: str = "external_file"  # or "hashed_bow"
    text: str = ""

    def __post_init__(self):
        object.__setattr__(self, "vector", _unit(self.vector))


@dataclass(frozen=True)
class AudioSemanticEmbedding:
    vector: np.ndarray
    source: str = "external_file"

    def __post_init__(self):
        object.__setattr__(self, "vector", _unit(self.vector))


def tokenize(text: str) -> list[str]:
    return [t for t in re.split(r"[^0-9a-z]+", text.lower()) if t]


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def token_bucket(token: str) -> int:
    return fnv1a_64(token.encode("utf-8")) % EMBED_DIM


def embed_text_hashed(text: str) -> QueryEmbedding:
    """Deterministic 512-d bag-of-words vector: FNV-1a token buckets, L2-normalized."""
    tokens = tokenize(text)
    if not tokens:
        raise ValueError(f"query {text!r} has no alphanumeric tokens")
    counts = np.zeros(EMBED_DIM)
    for tok in tokens:
        counts[token_bucket(tok)] += 1.0
    return QueryEmbedding(counts, "hashed_bow", text)


def save_embedding(e, path) -> None:
    """Write a TQSE file atomically (temp file + rename)."""
    vec = np.asarray(e.vector, dtype="<f4")
    atomic_write_bytes(path, _HEADER.pack(b"TQSE", 1, vec.size) + vec.tobytes())


def load_embedding(path, kind: str = "text"):
    """Read a TQSE file; ``kind`` picks QueryEmbedding ("text") or AudioSemanticEmbedding ("audio")."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise EmbeddingFormatError(f"{path}: too short for a TQSE header")
    magic, version, dim = _HEADER.unpack_from(raw)
    if magic != b"TQSE" or version != 1:
        raise EmbeddingFormatError(f"{path}: bad magic/version {magic!r}/{version}")
    if dim != EMBED_DIM:
        raise EmbeddingFormatError(f"{path}: dim {dim} != {EMBED_DIM}")
    body = raw[_HEADER.size:]
    if len(body) != 4 * dim:
        raise EmbeddingFormatError(f"{path}: payload has {len(body)} bytes, expected {4 * dim}")
    vec = np.frombuffer(body, dtype="<f4").astype(np.float64)
    if kind == "audio":
        return AudioSemanticEmbedding(vec)
    return QueryEmbedding(vec, "external_file")


def sidecar_path(directory, clip_id: str, kind: str = "text") -> Path:
    return Path(directory) / f"{clip_id}.{kind}.tqse"

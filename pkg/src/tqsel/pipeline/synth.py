"""Scene synthesis: corpus clips -> spatial mixtures + a JSONL manifest."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ..embed import load_embedding
from ..room import PROTOCOLS, label_frame_centers, normalize_protocol, render_scene_source, sample_scene
from ..signal import DEFAULT_SAMPLE_RATE, Waveform, mix, pad_or_truncate, write_wav
from ..util import atomic_write_text
from .corpus import CorpusEntry, load_corpus

PEAK_LIMIT = 0.99
SEED_STRIDE = 1_000_000
MANIFEST_NAME = "manifest.jsonl"


def thread_count() -> int:
    """Worker count: ``TQSEL_THREADS`` if set, else the CPU count."""
    env = os.environ.get("TQSEL_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("TQSEL_THREADS must be >= 1")
        return n
    return os.cpu_count() or 1


def record_seed(seed: int, index: int) -> int:
    return seed * SEED_STRIDE + index


def _mono(w: Waveform) -> Waveform:
    if w.channels == 1:
        return w
    return Waveform(w.samples.mean(axis=0, keepdims=True), w.sample_rate)


def _pick_clips(pool: list[CorpusEntry], rng) -> tuple[CorpusEntry, CorpusEntry]:
    """Two clips without replacement, preferring distinct captions so the query is unambiguous."""
    i = int(rng.integers(len(pool)))
    others = [j for j in range(len(pool)) if j != i and pool[j].caption != pool[i].caption]
    if not others:
        others = [j for j in range(len(pool)) if j != i]
    j = others[int(rng.integers(len(others)))]
    return pool[i], pool[j]


def _query_embedding_field(entry: CorpusEntry, out_dir: Path):
    if entry.text_embedding is None:
        return "hashed"
    load_embedding(entry.text_embedding)  # validate early
    return os.path.relpath(entry.text_embedding, out_dir)


def synthesize_record(
    pool: list[CorpusEntry], protocol: str, index: int, split: str, seed: int, out_dir: Path,
    duration: float, sample_rate: int, max_image_order: int, hop_s: float,
) -> dict:
    rseed = record_seed(seed, index)
    rng = np.random.default_rng([rseed, 1])
    clips = _pick_clips(pool, rng)
    scene = sample_scene(rseed, protocol, duration, sample_rate, max_image_order)
    if scene.protocol == PROTOCOLS[0]:
        target = 0  # the additive source carries no direction
    else:
        target = int(rng.integers(2))

    rendered = []
    labels = None
    for k, entry in enumerate(clips):
        dry = _mono(entry.load())
        if dry.sample_rate != sample_rate:
            raise ValueError(f"{entry.audio}: sample rate {dry.sample_rate} != {sample_rate}")
        audio, lab = render_scene_source(scene, k, pad_or_truncate(dry, duration), hop_s)
        rendered.append((audio, scene.sources[k].gain_db))
        if k == target:
            labels = lab
    mixture = mix(rendered)
    peak = float(np.max(np.abs(mixture.samples)))
    scale = PEAK_LIMIT / peak if peak > PEAK_LIMIT else 1.0
    mixture = Waveform(mixture.samples * scale, sample_rate)

    ex_id = f"{split}_{index:06d}"
    rel = f"audio/{ex_id}.wav"
    write_wav(out_dir / rel, mixture)
    query = clips[target]
    rec = {
        "id": ex_id,
        "audio": rel,
        "query_text": query.caption,
        "query_embedding": _query_embedding_field(query, out_dir),
        "protocol": scene.protocol,
        "seed": rseed,
        "split": split,
        "duration": duration,
        "sample_rate": sample_rate,
        "max_image_order": max_image_order,
        "label_hop_s": hop_s,
        "clips": [c.clip_id for c in clips],
        "target_source": target,
        "scale": scale,
    }
    if query.audio_embedding is not None:
        rec["audio_embedding"] = os.path.relpath(query.audio_embedding, out_dir)
    if scene.protocol == "moving":
        rec["target_series"] = [float(a) for a in labels]
    else:
        rec["target_deg"] = float(labels[0])
    return rec


def synthesize_dataset(
    corpus,
    protocol: str,
    count: int,
    split: str,
    seed: int,
    out_dir,
    duration: float = 10.0,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    max_image_order: int = 20,
    hop_s: float = 0.1,
    threads: int | None = None,
) -> list[dict]:
    """Render ``count`` mixtures and write ``manifest.jsonl`` under ``out_dir``.

    ``corpus`` is a directory or a list of CorpusEntry; only entries tagged
    ``split`` are drawn. Record ``i`` depends only on ``(seed, i)``.
    """
    protocol = normalize_protocol(protocol)
    if count < 1:
        raise ValueError("count must be >= 1")
    entries = load_corpus(corpus) if isinstance(corpus, (str, Path)) else list(corpus)
    pool = [e for e in entries if e.split == split]
    if len(pool) < 2:
        raise ValueError(f"corpus has {len(pool)} clip(s) in split {split!r}; need at least 2")
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)

    def job(i):
        return synthesize_record(pool, protocol, i, split, seed, out_dir, duration, sample_rate,
                                 max_image_order, hop_s)

    n_threads = threads or thread_count()
    if n_threads == 1:
        records = [job(i) for i in range(count)]
    else:
        with ThreadPoolExecutor(n_threads) as ex:
            records = list(ex.map(job, range(count)))
    text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
    atomic_write_text(out_dir / MANIFEST_NAME, text)
    return records


def load_manifest(path) -> list[dict]:
    """Manifest records with ``audio`` (and embedding paths) resolved against the manifest directory."""
    path = Path(path)
    root = path.parent
    records = []
    seen = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        for key in ("id", "audio", "query_text", "protocol", "seed", "split"):
            if key not in rec:
                raise ValueError(f"{path}:{lineno}: missing {key!r}")
        if ("target_deg" in rec) == ("target_series" in rec):
            raise ValueError(f"{path}:{lineno}: need exactly one of target_deg / target_series")
        targets = rec.get("target_series", [rec.get("target_deg")])
        if not all(0.0 <= t < 360.0 for t in targets):
            raise ValueError(f"{path}:{lineno}: target azimuth outside [0, 360)")
        if rec["seed"] in seen:
            raise ValueError(f"{path}:{lineno}: duplicate seed {rec['seed']}")
        seen.add(rec["seed"])
        rec["audio_path"] = root / rec["audio"]
        if rec.get("query_embedding", "hashed") != "hashed":
            rec["query_embedding_path"] = root / rec["query_embedding"]
        if rec.get("audio_embedding"):
            rec["audio_embedding_path"] = root / rec["audio_embedding"]
        records.append(rec)
    if not records:
        raise ValueError(f"{path}: empty manifest")
    return records


def resimulate_targets(rec: dict) -> np.ndarray:
    """Target azimuth labels recomputed from the stored scene seed (no audio rendering)."""
    scene = sample_scene(rec["seed"], rec["protocol"], rec["duration"], rec["sample_rate"],
                         rec.get("max_image_order", 20))
    traj = scene.sources[rec["target_source"]].trajectory
    centers = label_frame_centers(rec["duration"], rec.get("label_hop_s", 0.1))
    if traj.kind == "moving":
        return traj.azimuth_at(centers)
    return np.full(len(centers), traj.keyframes[0].azimuth)

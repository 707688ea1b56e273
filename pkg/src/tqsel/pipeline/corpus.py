"""(audio, caption) corpora: the JSONL index format and a synthetic toy corpus."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..signal import DEFAULT_SAMPLE_RATE, Waveform, read_wav, write_wav
from ..util import atomic_write_text

INDEX_NAME = "corpus.jsonl"
SPLITS = ("train", "eval", "test")

# (caption, band center Hz, mean burst length s, mean gap s); gap 0 means
# continuous. Bands are log-spaced and disjoint.
TOY_CLASSES = (
    ("a low engine hums steadily", 300.0, 2.0, 0.0),
    ("a cello plays a long note", 470.0, 0.8, 0.3),
    ("a man speaks in a calm voice", 720.0, 0.25, 0.15),
    ("a dog barks in the yard", 1100.0, 0.15, 0.45),
    ("a telephone rings loudly", 1700.0, 0.4, 0.2),
    ("birds chirp in the trees", 2600.0, 0.06, 0.2),
    ("a referee blows a whistle", 4000.0, 0.5, 0.4),
    ("steam hisses from a kettle", 6000.0, 2.0, 0.0),
)
BAND_RATIO = 1.2
RAMP_S = 0.01


@dataclass(frozen=True)
class CorpusEntry:
    clip_id: str
    audio: Path
    caption: str
    split: str = "train"
    text_embedding: Path | None = None
    audio_embedding: Path | None = None

    def __post_init__(self):
        if not self.caption.strip():
            raise ValueError(f"clip {self.clip_id!r} has an empty caption")
        if self.split not in SPLITS:
            raise ValueError(f"clip {self.clip_id!r}: split must be one of {SPLITS}, got {self.split!r}")

    def load(self) -> Waveform:
        return read_wav(self.audio)


def load_corpus(directory) -> list[CorpusEntry]:
    """Read ``corpus.jsonl``; paths inside are relative to the corpus directory."""
    root = Path(directory)
    index = root / INDEX_NAME
    if not index.exists():
        raise FileNotFoundError(f"{index} not found")
    entries = []
    for lineno, line in enumerate(index.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        rec = json.loads(line)
        try:
            entry = CorpusEntry(
                clip_id=str(rec["clip_id"]),
                audio=root / rec["audio"],
                caption=rec["caption"],
                split=rec.get("split", "train"),
                text_embedding=root / rec["text_embedding"] if rec.get("text_embedding") else None,
                audio_embedding=root / rec["audio_embedding"] if rec.get("audio_embedding") else None,
            )
        except KeyError as exc:
            raise ValueError(f"{index}:{lineno}: missing field {exc}") from None
        if not entry.audio.exists():
            raise FileNotFoundError(f"{index}:{lineno}: audio {entry.audio} not found")
        entries.append(entry)
    return entries


def burst_envelope(n: int, sample_rate: int, on_s: float, off_s: float, rng) -> np.ndarray:
    """On/off gate with exponentially distributed burst and gap lengths and 10 ms ramps."""
    if off_s <= 0:
        return np.ones(n)
    env = np.zeros(n)
    t = int(rng.uniform(0, off_s) * sample_rate)
    while t < n:
        length = max(int(rng.exponential(on_s) * sample_rate), int(0.5 * on_s * sample_rate), 1)
        env[t:t + length] = 1.0
        t += length + max(int(rng.exponential(off_s) * sample_rate), 1)
    if not env.any():
        env[: int(on_s * sample_rate)] = 1.0
    ramp = max(int(RAMP_S * sample_rate), 1)
    kernel = np.hanning(2 * ramp + 1)
    return np.convolve(env, kernel / kernel.sum(), mode="same")


def toy_clip(class_index: int, duration: float, sample_rate: int, rng) -> np.ndarray:
    """Band-limited noise plus a tone inside the class band, gated by the class rhythm; RMS 0.1."""
    _, fc, on_s, off_s = TOY_CLASSES[class_index]
    n = int(round(duration * sample_rate))
    lo, hi = fc / BAND_RATIO, min(fc * BAND_RATIO, 0.45 * sample_rate)
    # brick-wall band in the frequency domain: no out-of-band leakage
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    spec[(f < lo) | (f > hi)] = 0.0
    noise = np.fft.irfft(spec, n)
    noise /= np.sqrt(np.mean(noise**2))
    t = np.arange(n) / sample_rate
    f_tone = fc * rng.uniform(0.92, 1.08)
    tone = np.sqrt(2.0) * np.sin(2 * np.pi * f_tone * t + rng.uniform(0, 2 * np.pi))
    x = (noise + 0.5 * tone) * burst_envelope(n, sample_rate, on_s, off_s, rng)
    return 0.1 * x / np.sqrt(np.mean(x**2))


def make_toy_corpus(
    out_dir,
    clips_per_class: dict | None = None,
    duration: float = 2.0,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    seed: int = 0,
) -> list[CorpusEntry]:
    """Write 8 synthetic classes as WAV files plus a ``corpus.jsonl`` index."""
    clips_per_class = clips_per_class or {"train": 8, "eval": 2, "test": 2}
    root = Path(out_dir)
    (root / "audio").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    lines = []
    for split in SPLITS:
        for k, (caption, *_) in enumerate(TOY_CLASSES):
            for j in range(clips_per_class.get(split, 0)):
                clip_id = f"{split}_c{k}_{j:03d}"
                rel = f"audio/{clip_id}.wav"
                x = toy_clip(k, duration, sample_rate, rng)
                write_wav(root / rel, Waveform(x[None, :], sample_rate))
                lines.append(json.dumps(
                    {"clip_id": clip_id, "audio": rel, "caption": caption, "split": split},
                    sort_keys=True,
                ))
    atomic_write_text(root / INDEX_NAME, "\n".join(lines) + "\n")
    return load_corpus(root)

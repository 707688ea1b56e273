"""Waveform containers, STFT front end and WAV I/O."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

DEFAULT_SAMPLE_RATE = 16000


class ShapeError(ValueError):
    """Raised when array shapes, lengths or sample rates are incompatible."""


@dataclass(frozen=True)
class Waveform:
    """Channel-major multichannel audio.

    ``samples`` has shape (channels, length). 1-D input is promoted to a
    single channel.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2:
            raise ShapeError(f"waveform must be 1-D or 2-D, got shape {x.shape}")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(x)):
            raise ValueError("waveform contains NaN or Inf samples")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.length / self.sample_rate

    def channel(self, i: int) -> "Waveform":
        return Waveform(self.samples[i], self.sample_rate)


@dataclass(frozen=True)
class StftConfig:
    n_fft: int = 1024
    hop: int = 640
    window: str = "hann"

    def __post_init__(self):
        if self.n_fft <= 0 or self.n_fft & (self.n_fft - 1):
            raise ValueError(f"n_fft must be a power of two, got {self.n_fft}")
        if not 0 < self.hop <= self.n_fft:
            raise ValueError(f"hop must satisfy 0 < hop <= n_fft, got {self.hop}")
        if self.window != "hann":
            raise ValueError(f"unsupported window {self.window!r}")

    def n_frames(self, length: int) -> int:
        if length < self.n_fft:
            return 0
        return (length - self.n_fft) // self.hop + 1

    def frame_centers(self, n_frames: int, sample_rate: int) -> np.ndarray:
        """Center time in seconds of each STFT frame."""
        return (np.arange(n_frames) * self.hop + self.n_fft / 2) / sample_rate


def hann_window(n: int) -> np.ndarray:
    # periodic Hann, the usual STFT choice
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


@dataclass(frozen=True)
class ComplexSpectrogram:
    bins: np.ndarray  # frames x (n_fft/2 + 1)
    frame_rate: float
    config: StftConfig = field(default_factory=StftConfig)

    @property
    def n_frames(self) -> int:
        return self.bins.shape[0]


def frame_signal(x: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Strided (frames, n_fft) view over the last axis of ``x``."""
    n = (x.shape[-1] - n_fft) // hop + 1
    view = np.lib.stride_tricks.sliding_window_view(x, n_fft, axis=-1)
    return view[..., : n * hop : hop, :]


def stft(w: Waveform, cfg: StftConfig = StftConfig()) -> ComplexSpectrogram:
    """Hann-windowed STFT of a single-channel waveform, no centering/padding."""
    if w.channels != 1:
        raise ShapeError(f"stft expects a single channel, got {w.channels}")
    if w.length < cfg.n_fft:
        raise ShapeError(f"input length {w.length} shorter than n_fft={cfg.n_fft}")
    bins = stft_array(w.samples[0], cfg)
    return ComplexSpectrogram(bins, w.sample_rate / cfg.hop, cfg)


def stft_array(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """STFT over the last axis of a raw array: (..., frames, n_fft//2+1)."""
    if x.shape[-1] < cfg.n_fft:
        raise ShapeError(f"input length {x.shape[-1]} shorter than n_fft={cfg.n_fft}")
    frames = frame_signal(x, cfg.n_fft, cfg.hop) * hann_window(cfg.n_fft)
    return np.fft.rfft(frames, axis=-1)


def pad_or_truncate(w: Waveform, seconds: float) -> Waveform:
    if seconds <= 0:
        raise ValueError("seconds must be positive")
    n = int(round(seconds * w.sample_rate))
    if w.length >= n:
        return Waveform(w.samples[:, :n], w.sample_rate)
    out = np.zeros((w.channels, n))
    out[:, : w.length] = w.samples
    return Waveform(out, w.sample_rate)


def db_to_gain(gain_db: float) -> float:
    return 10.0 ** (gain_db / 20.0)


def mix(inputs) -> Waveform:
    """Sum of gain-scaled waveforms. ``inputs`` is a sequence of (Waveform, gain_db)."""
    inputs = list(inputs)
    if not inputs:
        raise ShapeError("mix needs at least one input")
    first = inputs[0][0]
    out = np.zeros_like(first.samples)
    for w, gain_db in inputs:
        if w.sample_rate != first.sample_rate or w.samples.shape != first.samples.shape:
            raise ShapeError(
                f"cannot mix {w.samples.shape}@{w.sample_rate} Hz with "
                f"{first.samples.shape}@{first.sample_rate} Hz"
            )
        out = out + db_to_gain(gain_db) * w.samples
    return Waveform(out, first.sample_rate)


def read_wav(path) -> Waveform:
    """Read PCM16 or float32 WAV into a float waveform in [-1, 1]."""
    sr, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    else:
        x = data.astype(np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return Waveform(x.T, sr)


def write_wav(path, w: Waveform, subtype: str = "float32") -> None:
    """Write interleaved WAV; ``subtype`` is ``"float32"`` or ``"pcm16"``."""
    x = w.samples.T
    if subtype == "float32":
        data = x.astype("<f4")
    elif subtype == "pcm16":
        data = np.clip(np.round(x * 32767.0), -32768, 32767).astype("<i2")
    else:
        raise ValueError(f"unknown WAV subtype {subtype!r}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), w.sample_rate, data)

"""GCC-PHAT spatial features and their stacking over microphone pairs."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path

import numpy as np

from .room import SceneSpec
from .signal import ComplexSpectrogram, ShapeError, StftConfig, Waveform, stft_array
from .util import atomic_write_bytes

NUM_LAGS = 96
MAG_FLOOR = 1e-8


@dataclass(frozen=True)
class GccFeature:
    values: np.ndarray  # (pairs, frames, lags)
    lag_axis: np.ndarray
    pair_index: tuple
    frame_rate: float

    @property
    def shape(self):
        return self.values.shape


def lag_axis(num_lags: int) -> np.ndarray:
    """Integer lags centered on zero; even counts carry the extra lag on the negative side."""
    return np.arange(num_lags) - num_lags // 2


def _gcc_from_bins(xm: np.ndarray, xn: np.ndarray, n_fft: int, num_lags: int) -> np.ndarray:
    # Positive lag = channel n lags channel m, so correlate n against m.
    cross = xn * np.conj(xm)
    mag = np.abs(cross)
    phat = np.where(mag > MAG_FLOOR, cross / np.maximum(mag, MAG_FLOOR), 0.0)
    cc = np.fft.irfft(phat, n=n_fft, axis=-1)
    return cc[..., lag_axis(num_lags) % n_fft]


def gcc_phat_pair(sm: ComplexSpectrogram, sn: ComplexSpectrogram, num_lags: int = NUM_LAGS):
    """Frame-wise GCC-PHAT between two channels, shape (frames, num_lags).

    Column ``j`` holds the response at lag ``lag_axis(num_lags)[j]``.
    """
    if sm.bins.shape != sn.bins.shape or sm.config != sn.config:
        raise ShapeError(f"spectrogram mismatch: {sm.bins.shape} vs {sn.bins.shape}")
    if not 0 < num_lags <= sm.config.n_fft:
        raise ValueError(f"num_lags must be in (0, n_fft], got {num_lags}")
    return _gcc_from_bins(sm.bins, sn.bins, sm.config.n_fft, num_lags)


def mic_pairs(n_channels: int) -> list[tuple[int, int]]:
    return list(combinations(range(n_channels), 2))


def gcc_phat_stack(
    w: Waveform, cfg: StftConfig = StftConfig(), num_lags: int = NUM_LAGS
) -> GccFeature:
    """GCC-PHAT for every unordered mic pair in lexicographic order."""
    if w.channels < 2:
        raise ShapeError("gcc_phat_stack needs at least two channels")
    bins = stft_array(w.samples, cfg)  # (channels, frames, bins)
    pairs = mic_pairs(w.channels)
    m = [p[0] for p in pairs]
    n = [p[1] for p in pairs]
    values = _gcc_from_bins(bins[m], bins[n], cfg.n_fft, num_lags)
    return GccFeature(values, lag_axis(num_lags), tuple(pairs), w.sample_rate / cfg.hop)


def permute_gcc(values: np.ndarray, perm) -> np.ndarray:
    """GCC stack (pairs, ..., lags) re-expressed for channels reordered so new channel k is old ``perm[k]``.

    A pair whose order flips is lag-reversed; the lone unmatched extreme lag
    (an even lag count has no +num_lags/2 counterpart) keeps its old value.
    """
    perm = list(perm)
    n_ch = len(perm)
    if sorted(perm) != list(range(n_ch)):
        raise ValueError(f"{perm} is not a permutation")
    pairs = mic_pairs(n_ch)
    if values.shape[0] != len(pairs):
        raise ShapeError(f"{values.shape[0]} pairs do not match {n_ch} channels")
    index = {p: i for i, p in enumerate(pairs)}
    out = np.empty_like(values)
    for i, (a, b) in enumerate(pairs):
        pa, pb = perm[a], perm[b]
        if pa < pb:
            out[i] = values[index[(pa, pb)]]
        else:
            src = values[index[(pb, pa)]]
            if values.shape[-1] % 2:
                out[i] = src[..., ::-1]
            else:
                out[i, ..., 1:] = src[..., :0:-1]
                out[i, ..., 0] = src[..., 0]
    return out


def expected_tdoa(scene: SceneSpec, pair, t: float = 0.0, source: int = 0) -> float:
    """Direct-path lag in samples of mic ``n`` relative to mic ``m`` for a scene source."""
    src = scene.sources[source]
    if src.role != "directional" or src.trajectory is None:
        raise ValueError("TDOA is undefined for a non-directional source")
    p = src.trajectory.position(t, scene.array)
    mics = scene.array.mic_positions
    m, n = pair
    diff = np.linalg.norm(p - mics[n]) - np.linalg.norm(p - mics[m])
    return float(diff * scene.sample_rate / scene.room.speed_of_sound)


_GCC_HEADER = struct.Struct("<4sIIII")


def save_feature(feat: GccFeature, path) -> None:
    n_pairs, n_frames, n_lags = feat.values.shape
    header = _GCC_HEADER.pack(b"TQGC", 1, n_pairs, n_frames, n_lags)
    atomic_write_bytes(path, header + feat.values.astype("<f4").tobytes())


def load_feature(path, frame_rate: float = 0.0) -> GccFeature:
    raw = Path(path).read_bytes()
    magic, version, n_pairs, n_frames, n_lags = _GCC_HEADER.unpack_from(raw)
    if magic != b"TQGC" or version != 1:
        raise ValueError(f"{path}: not a TQGC v1 feature file")
    body = raw[_GCC_HEADER.size:]
    if len(body) != 4 * n_pairs * n_frames * n_lags:
        raise ValueError(f"{path}: truncated feature payload")
    values = np.frombuffer(body, dtype="<f4").reshape(n_pairs, n_frames, n_lags)
    n_ch = int(round((1 + np.sqrt(1 + 8 * n_pairs)) / 2))
    return GccFeature(values.astype(np.float32), lag_axis(n_lags), tuple(mic_pairs(n_ch)), frame_rate)

"""Gaussian azimuth targets, the L1 "EMD" objective, argmax decoding and circular MAE."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import Tensor, ops

N_BINS = 360
DEFAULT_SIGMA_SQ = 5.0


@dataclass(frozen=True)
class DoaTarget:
    azimuth_deg: float
    sigma_sq: float = DEFAULT_SIGMA_SQ

    def __post_init__(self):
        if not 0.0 <= self.azimuth_deg < 360.0:
            raise ValueError(f"azimuth {self.azimuth_deg} outside [0, 360)")
        if self.sigma_sq <= 0:
            raise ValueError("sigma_sq must be positive")


def circular_distance(a, b) -> np.ndarray:
    """Wrap-around distance in degrees, in [0, 180]."""
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) % 360.0
    return np.minimum(d, 360.0 - d)


def encode_doa_target(t: DoaTarget) -> np.ndarray:
    """360-bin distribution, a circularly wrapped Gaussian centered on the azimuth."""
    d = circular_distance(np.arange(N_BINS), t.azimuth_deg)
    y = np.exp(-(d ** 2) / (2.0 * t.sigma_sq))
    return y / y.sum()


def encode_doa_targets(azimuths, sigma_sq: float = DEFAULT_SIGMA_SQ) -> np.ndarray:
    """Vectorized encoding for an array of azimuths; output shape (*azimuths.shape, 360)."""
    az = np.asarray(azimuths, dtype=float)
    d = circular_distance(np.arange(N_BINS), az[..., None])
    y = np.exp(-(d ** 2) / (2.0 * sigma_sq))
    return y / y.sum(axis=-1, keepdims=True)


def emd_loss(logits: Tensor, y) -> Tensor:
    """sum_i |softmax(logits)_i - y_i|, averaged over any leading axes.

    ``logits`` has shape (..., 360); ``y`` is a matching array of target
    distributions. The gradient uses subgradient 0 where the terms tie.
    """
    if not np.all(np.isfinite(logits.data)):
        raise FloatingPointError("emd_loss received non-finite logits")
    y = np.asarray(y, dtype=logits.dtype)
    if y.shape != logits.shape or logits.shape[-1] != N_BINS:
        raise ValueError(f"emd_loss: logits {logits.shape} vs targets {y.shape}")
    p = ops.softmax(logits, axis=-1)
    per_item = ops.sum(ops.abs(ops.sub(p, Tensor(y))), axis=-1)
    return ops.mean(per_item)


def emd_distance(p, y) -> float:
    """Plain-array version of the objective between two distributions."""
    return float(np.abs(np.asarray(p) - np.asarray(y)).sum())


def decode_argmax(values) -> int:
    """Predicted azimuth in degrees; ties resolve to the smallest index."""
    v = np.asarray(values)
    if not np.all(np.isfinite(v)):
        raise ValueError("decode_argmax received non-finite values")
    return int(np.argmax(v))


def circular_mae(pred_deg, gt_deg) -> float:
    pred = np.asarray(pred_deg, dtype=float).reshape(-1)
    gt = np.asarray(gt_deg, dtype=float).reshape(-1)
    if pred.size == 0 or pred.size != gt.size:
        raise ValueError(f"circular_mae needs equal non-empty sequences, got {pred.size} and {gt.size}")
    e = np.abs(pred - gt)
    e = np.where(e > 180.0, 360.0 - e, e)
    return float(e.mean())

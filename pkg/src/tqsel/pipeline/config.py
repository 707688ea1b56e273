"""Experiment configuration: defaults, presets and file loading."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..features import NUM_LAGS
from ..signal import DEFAULT_SAMPLE_RATE, StftConfig


@dataclass(frozen=True)
class ExperimentConfig:
    sample_rate: int = DEFAULT_SAMPLE_RATE
    n_fft: int = 1024
    hop: int = 640
    num_lags: int = NUM_LAGS
    model: str = "clip_concat"
    model_params: dict = field(default_factory=dict)
    frame_mode: str = "per_frame"  # frame model only: per_frame | cls_pooled
    batch_size: int = 64
    lr: float = 5e-4
    lr_decay: float = 0.5
    lr_decay_every: int = 20
    patience: int = 10
    max_epochs: int = 200
    sigma_sq: float = 5.0
    label_hop_s: float = 0.1
    augment: str = "none"  # none | square_dihedral
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("sample_rate", "num_lags", "batch_size", "lr_decay_every", "patience", "max_epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("lr", "lr_decay", "sigma_sq", "label_hop_s"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.augment not in ("none", "square_dihedral"):
            raise ValueError(f"unknown augment {self.augment!r}")
        if self.frame_mode not in ("per_frame", "cls_pooled"):
            raise ValueError(f"unknown frame_mode {self.frame_mode!r}")
        StftConfig(self.n_fft, self.hop)
        object.__setattr__(self, "model_params", dict(self.model_params))  # never share a caller's dict

    @property
    def stft(self) -> StftConfig:
        return StftConfig(self.n_fft, self.hop)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_updates(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


# Smaller training setup that runs on a laptop CPU; the dataclass defaults stay at the published values.
# The clip model adds a query-selected lag filterbank, initialized to log-spaced band-passes, in front of
# the conv stack: with few examples the late-fusion model never learns which source the query names.
# Time pooling keeps the lag position.
DESK_CLIP_PARAMS = {"pool": "time", "query_filters": 16, "query_filter_init": "bandpass"}
DESK_PRESET = dict(batch_size=16, max_epochs=50, augment="square_dihedral", lr=5e-4,
                   model_params=DESK_CLIP_PARAMS)


def _parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path) -> ExperimentConfig:
    """JSON object, or UTF-8 ``key = value`` lines (values parsed as JSON when possible).

    In key=value files, ``model.<name> = value`` sets an entry of ``model_params``
    and ``preset = desk`` applies the desk-scale preset before other keys.
    """
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        return ExperimentConfig.from_dict(json.loads(text))
    values: dict = {}
    params: dict = {}
    preset = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "preset":
            if _parse_value(value) != "desk":
                raise ValueError(f"{path}:{lineno}: unknown preset {value!r}")
            preset = dict(DESK_PRESET)
        elif key.startswith("model."):
            params[key[6:]] = _parse_value(value)
        else:
            values[key] = _parse_value(value)
    merged = {**preset, **values}
    if preset and merged.get("model", "clip_concat") != "clip_concat":
        merged.pop("model_params", None)  # the preset's architecture knobs are clip-model specific
    if params:
        merged["model_params"] = {**merged.get("model_params", {}), **params}
    return ExperimentConfig.from_dict(merged)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

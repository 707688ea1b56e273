"""Shoebox image-source acoustics, source rendering and random scene sampling."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

from functools import lru_cache

import numpy as np
from scipy.optimize import brentq
from scipy.signal import butter, fftconvolve, sosfilt

from .signal import DEFAULT_SAMPLE_RATE, Waveform
from .util import atomic_write_bytes

SINC_TAPS = 81
PROTOCOLS = ("one_directional_one_additive", "two_directional", "moving")
PROTOCOL_ALIASES = {"1dir1add": PROTOCOLS[0], "2dir": PROTOCOLS[1], "moving": PROTOCOLS[2]}

# room-wall clearance kept for sampled sources
WALL_MARGIN = 0.1


class GeometryError(ValueError):
    pass


class RirFormatError(ValueError):
    pass


@dataclass(frozen=True)
class RoomSpec:
    dimensions: tuple
    rt60: float
    speed_of_sound: float = 343.0
    max_image_order: int = 20
    absorption: str = "calibrated"  # or "sabine"

    def __post_init__(self):
        if self.absorption not in ("calibrated", "sabine"):
            raise ValueError(f"unknown absorption mode {self.absorption!r}")
        dims = tuple(float(d) for d in self.dimensions)
        if len(dims) != 3 or min(dims) <= 0:
            raise GeometryError(f"room dimensions must be 3 positive lengths, got {dims}")
        if self.rt60 <= 0:
            raise ValueError("rt60 must be positive")
        if self.max_image_order < 0:
            raise ValueError("max_image_order must be >= 0")
        object.__setattr__(self, "dimensions", dims)

    @property
    def volume(self) -> float:
        x, y, z = self.dimensions
        return x * y * z

    @property
    def surface(self) -> float:
        x, y, z = self.dimensions
        return 2 * (x * y + y * z + x * z)

    def contains(self, p, margin: float = 0.0) -> bool:
        p = np.asarray(p, dtype=float)
        dims = np.asarray(self.dimensions)
        return bool(np.all(p > margin) and np.all(p < dims - margin))


@dataclass(frozen=True)
class ArrayGeometry:
    mic_positions: np.ndarray  # (mics, 3)

    def __post_init__(self):
        pos = np.asarray(self.mic_positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise GeometryError(f"mic positions must be (mics, 3), got {pos.shape}")
        if pos.shape[0] < 2:
            raise GeometryError("an array needs at least 2 microphones")
        d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
        if np.any(d[np.triu_indices(len(pos), 1)] == 0):
            raise GeometryError("microphone positions must be pairwise distinct")
        object.__setattr__(self, "mic_positions", pos)

    def __eq__(self, other):
        if not isinstance(other, ArrayGeometry):
            return NotImplemented
        return np.array_equal(self.mic_positions, other.mic_positions)

    def __hash__(self):
        return hash(self.mic_positions.tobytes())

    @property
    def n_mics(self) -> int:
        return self.mic_positions.shape[0]

    @property
    def centroid(self) -> np.ndarray:
        return self.mic_positions.mean(axis=0)

    @classmethod
    def square(cls, center, side: float) -> "ArrayGeometry":
        """Horizontal square; mics counter-clockwise from the (+x, +y) corner."""
        h = side / 2
        offsets = np.array([[h, h, 0], [-h, h, 0], [-h, -h, 0], [h, -h, 0]])
        return cls(np.asarray(center, dtype=float) + offsets)


class Keyframe(NamedTuple):
    time: float
    azimuth: float  # degrees, [0, 360)
    radius: float  # meters, horizontal distance from array centroid
    height: float  # meters, z offset from array centroid


@dataclass(frozen=True)
class SourceTrajectory:
    """Source path relative to the array centroid, linearly interpolated between keyframes."""

    keyframes: tuple
    kind: str = "static"

    def __post_init__(self):
        kfs = tuple(Keyframe(*map(float, k)) for k in self.keyframes)
        if not kfs:
            raise GeometryError("trajectory needs at least one keyframe")
        if kfs[0].time != 0.0:
            raise GeometryError("first keyframe must be at t=0")
        if any(b.time <= a.time for a, b in zip(kfs, kfs[1:])):
            raise GeometryError("keyframe times must be strictly increasing")
        if self.kind not in ("static", "moving"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.kind == "static" and len(kfs) != 1:
            raise GeometryError("a static trajectory has exactly one keyframe")
        for k in kfs:
            if not 0.0 <= k.azimuth < 360.0:
                raise GeometryError(f"azimuth {k.azimuth} outside [0, 360)")
        object.__setattr__(self, "keyframes", kfs)

    @classmethod
    def static(cls, azimuth: float, radius: float, height: float = 0.0):
        return cls((Keyframe(0.0, azimuth % 360.0, radius, height),), "static")

    def _unwrapped(self):
        kfs = self.keyframes
        t = np.array([k.time for k in kfs])
        az = np.array([k.azimuth for k in kfs])
        # consecutive keyframes move along the shorter arc
        steps = (np.diff(az) + 180.0) % 360.0 - 180.0
        unwrapped = np.concatenate([[az[0]], az[0] + np.cumsum(steps)])
        return t, unwrapped

    def azimuth_at(self, t) -> np.ndarray:
        times, az = self._unwrapped()
        return np.interp(t, times, az) % 360.0

    def relative_position(self, t) -> np.ndarray:
        """Offsets from the array centroid, shape (..., 3)."""
        t = np.asarray(t, dtype=float)
        times, az = self._unwrapped()
        a = np.deg2rad(np.interp(t, times, az))
        r = np.interp(t, times, [k.radius for k in self.keyframes])
        h = np.interp(t, times, [k.height for k in self.keyframes])
        return np.stack([r * np.cos(a), r * np.sin(a), h], axis=-1)

    def position(self, t, array: ArrayGeometry) -> np.ndarray:
        return array.centroid + self.relative_position(t)


@dataclass(frozen=True)
class Rir:
    taps: np.ndarray  # (mics, samples)
    sample_rate: int

    def __post_init__(self):
        taps = np.atleast_2d(np.asarray(self.taps, dtype=float))
        if not np.all(np.isfinite(taps)):
            raise ValueError("RIR taps must be finite")
        object.__setattr__(self, "taps", taps)

    @property
    def n_mics(self) -> int:
        return self.taps.shape[0]


@dataclass(frozen=True)
class SceneSource:
    role: str  # "directional" | "additive"
    gain_db: float = 0.0
    trajectory: SourceTrajectory | None = None


@dataclass(frozen=True)
class SceneSpec:
    room: RoomSpec
    array: ArrayGeometry
    sources: tuple
    seed: int
    protocol: str = PROTOCOLS[0]
    duration: float = 10.0
    sample_rate: int = DEFAULT_SAMPLE_RATE

    @property
    def gains_db(self):
        return [s.gain_db for s in self.sources]

    def directional_indices(self):
        return [i for i, s in enumerate(self.sources) if s.role == "directional"]


class Absorption(NamedTuple):
    alpha: float
    clamped: bool


def sabine_absorption(room: RoomSpec) -> Absorption:
    """Uniform wall energy absorption realizing ``room.rt60`` by Sabine's formula.

    ``clamped`` is set when the room is too large/absorbent-limited to reach
    the requested RT60 and the coefficient was clipped to 0.9999.
    """
    alpha = 0.161 * room.volume / (room.surface * room.rt60)
    if alpha >= 1.0:
        return Absorption(0.9999, True)
    return Absorption(alpha, False)


def _energy_decay_rt60(room: RoomSpec, alpha: float, source, receiver, sample_rate: int) -> float:
    pos, order = image_sources(room, source)
    d = np.linalg.norm(pos - receiver, axis=1)
    idx = np.round(d / room.speed_of_sound * sample_rate).astype(np.int64)
    energy = np.bincount(idx, weights=(1.0 - alpha) ** order / (4 * np.pi * d) ** 2)
    try:
        return schroeder_rt60(np.sqrt(energy), sample_rate)
    except ValueError:
        return 0.0


@lru_cache(maxsize=256)
def calibrated_absorption(room: RoomSpec, sample_rate: int = DEFAULT_SAMPLE_RATE) -> float:
    """Wall absorption whose image-source energy decay has T20 equal to ``room.rt60``.

    Sabine's formula assumes a diffuse field; a shoebox image model with the
    Sabine coefficient decays too fast in absorbent rooms and too slowly in
    live ones. This solves for the coefficient on the incoherent image
    energy histogram between a fixed receiver near the room center and a
    source ~2 m away. Falls back to the Sabine value when the requested RT60
    is out of reach at the configured image order.
    """
    sabine = sabine_absorption(room).alpha
    lx, ly, lz = room.dimensions
    receiver = np.array([lx / 2, ly / 2, min(1.1, lz / 2)])
    source = receiver + np.array([1.3, 1.3, 0.3])
    if not room.contains(source):
        return sabine

    def excess(alpha):
        rt = _energy_decay_rt60(room, alpha, source, receiver, sample_rate)
        return np.log(max(rt, 1e-6) / room.rt60)

    lo, hi = 1e-3, 0.95
    if excess(lo) < 0 or excess(hi) > 0:
        return sabine
    return float(brentq(excess, lo, hi, xtol=1e-5))


def wall_absorption(room: RoomSpec, sample_rate: int = DEFAULT_SAMPLE_RATE) -> float:
    if room.absorption == "sabine":
        return sabine_absorption(room).alpha
    return calibrated_absorption(room, sample_rate)


def _images_1d(u: np.ndarray, length: float, s: float) -> np.ndarray:
    # image index u has |u| reflections on this axis
    return np.where(u % 2 == 0, u * length + s, (u + 1) * length - s)


def image_sources(room: RoomSpec, source) -> tuple[np.ndarray, np.ndarray]:
    """All image positions with total reflection order <= max_image_order.

    Returns (positions (n, 3), orders (n,)).
    """
    n = room.max_image_order
    r = np.arange(-n, n + 1)
    u, v, w = (a.ravel() for a in np.meshgrid(r, r, r, indexing="ij"))
    order = np.abs(u) + np.abs(v) + np.abs(w)
    keep = order <= n
    u, v, w, order = u[keep], v[keep], w[keep], order[keep]
    lx, ly, lz = room.dimensions
    sx, sy, sz = np.asarray(source, dtype=float)
    pos = np.stack(
        [_images_1d(u, lx, sx), _images_1d(v, ly, sy), _images_1d(w, lz, sz)], axis=1
    )
    return pos, order


_FRAC_STEPS = 1024


@lru_cache(maxsize=1)
def _sinc_tables() -> tuple[np.ndarray, np.ndarray]:
    """Hann-windowed sinc at ``_FRAC_STEPS`` fractional offsets and its row
    differences, both stored tap-major: (taps, steps + 1) and (taps, steps)."""
    half = SINC_TAPS // 2
    frac = np.arange(_FRAC_STEPS + 1) / _FRAC_STEPS
    x = np.arange(-half, half + 1)[None, :] - frac[:, None]
    table = np.sinc(x) * 0.5 * (1.0 + np.cos(np.pi * x / (half + 1)))
    return np.ascontiguousarray(table.T), np.ascontiguousarray(np.diff(table, axis=0).T)


def _fractional_delay_taps(delays: np.ndarray, amps: np.ndarray, length: int) -> np.ndarray:
    """Sum windowed-sinc pulses; ``delays``/``amps`` are (mics, images).

    Pulse shapes are linearly interpolated from a fine fractional-delay
    table (interpolation error below 2e-6 of the pulse amplitude).
    """
    half = SINC_TAPS // 2
    n_mics = delays.shape[0]
    table, slope = _sinc_tables()
    base = np.floor(delays).astype(np.int64)
    pos = (delays - base) * _FRAC_STEPS
    row = np.minimum(pos.astype(np.int64), _FRAC_STEPS - 1).ravel()
    a = amps.ravel()
    aw = (amps * (pos - row.reshape(pos.shape))).ravel()
    # padded per-mic stride so pulses never straddle channels or go negative
    stride = length + 2 * half + 1
    start = (base + (np.arange(n_mics) * stride)[:, None]).ravel()
    out = np.zeros(n_mics * stride)
    for j in range(SINC_TAPS):
        out += np.bincount(
            start + j, weights=a * table[j, row] + aw * slope[j, row], minlength=out.size
        )[: out.size]
    return out.reshape(n_mics, stride)[:, half:half + length]


def simulate_rir(
    room: RoomSpec, source, array: ArrayGeometry, sample_rate: int = DEFAULT_SAMPLE_RATE
) -> Rir:
    """Image-source RIR from a point source to every microphone."""
    source = np.asarray(source, dtype=float)
    if not room.contains(source):
        raise GeometryError(f"source {source} is not strictly inside the room")
    for p in array.mic_positions:
        if not room.contains(p):
            raise GeometryError(f"microphone {p} is not strictly inside the room")
    dist_direct = np.linalg.norm(array.mic_positions - source, axis=1)
    if np.any(dist_direct <= 0.1):
        raise GeometryError("source-microphone distance must exceed 0.1 m")

    alpha = wall_absorption(room, sample_rate)
    pos, order = image_sources(room, source)
    refl = (1.0 - alpha) ** (order / 2.0)
    dist = np.linalg.norm(array.mic_positions[:, None, :] - pos[None], axis=-1)
    delays = dist / room.speed_of_sound * sample_rate
    amps = refl[None, :] / (4 * np.pi * dist)
    length = int(np.ceil(delays.max())) + SINC_TAPS // 2 + 1
    return Rir(_fractional_delay_taps(delays, amps, length), sample_rate)


def schroeder_rt60(
    taps: np.ndarray, sample_rate: int, fit_db=(-5.0, -25.0), octave_band: float | None = None,
    highpass: float | None = None,
) -> float:
    """RT60 from a line fit to the Schroeder energy decay curve (T20 by default).

    With ``octave_band`` set (center Hz), the taps are first passed through
    a 3rd-order Butterworth octave band-pass. ``highpass`` (Hz) applies a
    2nd-order Butterworth high-pass instead; image-source RIRs carry a slowly
    decaying DC build-up (every image has a positive amplitude) that
    otherwise stretches the broadband decay.
    """
    taps = np.asarray(taps, dtype=float)
    if octave_band is not None:
        edges = [octave_band / np.sqrt(2), octave_band * np.sqrt(2)]
        taps = sosfilt(butter(3, edges, "bandpass", fs=sample_rate, output="sos"), taps)
    if highpass is not None:
        taps = sosfilt(butter(2, highpass, "highpass", fs=sample_rate, output="sos"), taps)
    energy = taps ** 2
    edc = np.cumsum(energy[::-1])[::-1]
    edc_db = 10 * np.log10(edc / edc[0] + 1e-300)
    hi, lo = fit_db
    sel = (edc_db <= hi) & (edc_db >= lo)
    if sel.sum() < 2:
        raise ValueError("decay curve does not span the fit range")
    t = np.flatnonzero(sel) / sample_rate
    slope, _ = np.polyfit(t, edc_db[sel], 1)
    return -60.0 / slope


def render_static_source(dry: Waveform, rir: Rir) -> Waveform:
    """Convolve a mono signal with each microphone's RIR, keeping the dry length."""
    if dry.channels != 1:
        raise ValueError("dry signal must be mono")
    if dry.sample_rate != rir.sample_rate:
        raise ValueError(f"sample rate mismatch: dry {dry.sample_rate}, RIR {rir.sample_rate}")
    out = fftconvolve(dry.samples, rir.taps, axes=-1)[:, : dry.length]
    return Waveform(out, dry.sample_rate)


def render_additive_source(dry: Waveform, n_mics: int) -> Waveform:
    """Background source injected identically into every channel, no RIR."""
    return Waveform(np.repeat(dry.samples[:1], n_mics, axis=0), dry.sample_rate)


def label_frame_centers(duration: float, hop_s: float) -> np.ndarray:
    n = int(np.ceil(duration / hop_s - 1e-9))
    return (np.arange(n) + 0.5) * hop_s


def crossfade_weights(n_samples: int, sample_rate: int, hop_s: float, n_segments: int):
    """Raised-cosine weights (segments, samples) with 50% overlap, summing to 1."""
    t = np.arange(n_samples) / sample_rate
    centers = (np.arange(n_segments) + 0.5) * hop_s
    pos = np.clip((t - centers[0]) / hop_s, 0, n_segments - 1)
    k = np.minimum(np.floor(pos).astype(int), max(n_segments - 2, 0))
    frac = pos - k
    w = np.zeros((n_segments, n_samples))
    cols = np.arange(n_samples)
    if n_segments == 1:
        w[0] = 1.0
        return w
    w[k, cols] = np.cos(0.5 * np.pi * frac) ** 2
    w[k + 1, cols] += np.sin(0.5 * np.pi * frac) ** 2
    return w


def render_moving_source(
    dry: Waveform,
    room: RoomSpec,
    traj: SourceTrajectory,
    array: ArrayGeometry,
    hop_s: float = 0.1,
) -> tuple[Waveform, np.ndarray]:
    """Render a moving source with one RIR per ``hop_s`` segment.

    Each segment's input slice is shaped by a raised-cosine crossfade window
    and convolved with the RIR at the segment center. Returns the multichannel
    render and the ground-truth azimuth at every label-frame center.
    """
    if traj.kind != "moving":
        raise ValueError("render_moving_source expects a moving trajectory")
    if hop_s <= 0:
        raise ValueError("hop_s must be positive")
    if dry.channels != 1:
        raise ValueError("dry signal must be mono")
    sr = dry.sample_rate
    centers = label_frame_centers(dry.duration, hop_s)
    positions = traj.position(centers, array)
    for p in positions:
        if not room.contains(p):
            raise GeometryError(f"trajectory leaves the room at {p}")
    weights = crossfade_weights(dry.length, sr, hop_s, len(centers))
    out = np.zeros((array.n_mics, dry.length))
    x = dry.samples[0]
    for k, p in enumerate(positions):
        nz = np.flatnonzero(weights[k])
        if nz.size == 0:
            continue
        a, b = nz[0], nz[-1] + 1
        rir = simulate_rir(room, p, array, sr)
        seg = fftconvolve((weights[k, a:b] * x[a:b])[None, :], rir.taps, axes=-1)
        end = min(dry.length, a + seg.shape[1])
        out[:, a:end] += seg[:, : end - a]
    return Waveform(out, sr), traj.azimuth_at(centers)


def normalize_protocol(protocol: str) -> str:
    protocol = PROTOCOL_ALIASES.get(protocol, protocol)
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")
    return protocol


def _sample_trajectory(rng, room, array, moving: bool, duration: float, retries=100):
    c = array.centroid
    for _ in range(retries):
        radius = rng.uniform(1.0, 3.0)
        height = rng.uniform(-0.5, 0.5)
        az0 = rng.uniform(0.0, 360.0)
        if moving:
            speed = rng.uniform(5.0, 20.0) * rng.choice([-1.0, 1.0])
            times = np.arange(0.0, np.ceil(duration) + 1.0)
            kfs = tuple(
                Keyframe(t, (az0 + speed * t) % 360.0, radius, height) for t in times
            )
            traj = SourceTrajectory(kfs, "moving")
            probe = np.arange(0.0, times[-1] + 1e-9, 0.05)
        else:
            traj = SourceTrajectory.static(az0, radius, height)
            probe = np.array([0.0])
        pts = c + traj.relative_position(probe)
        if all(room.contains(p, WALL_MARGIN) for p in np.atleast_2d(pts)):
            return traj
    # a 1 m radius always fits: the centroid is >= 1.5 m from every wall
    az0 = rng.uniform(0.0, 360.0)
    if not moving:
        return SourceTrajectory.static(az0, 1.0, 0.0)
    speed = rng.uniform(5.0, 20.0) * rng.choice([-1.0, 1.0])
    times = np.arange(0.0, np.ceil(duration) + 1.0)
    return SourceTrajectory(tuple(Keyframe(t, (az0 + speed * t) % 360.0, 1.0, 0.0) for t in times), "moving")


def sample_scene(
    rng_seed: int,
    protocol: str = PROTOCOLS[0],
    duration: float = 10.0,
    sample_rate: int = DEFAULT_SAMPLE_RATE,
    max_image_order: int = 20,
) -> SceneSpec:
    """Random room/array/source layout; fully determined by ``rng_seed``."""
    protocol = normalize_protocol(protocol)
    rng = np.random.default_rng(rng_seed)
    dims = tuple(rng.uniform(5.0, 15.0, size=3))
    room = RoomSpec(dims, rt60=rng.uniform(0.5, 1.0), max_image_order=max_image_order)
    side = rng.uniform(0.10, 0.13)
    center = (
        dims[0] / 2 + rng.uniform(-1.0, 1.0),
        dims[1] / 2 + rng.uniform(-1.0, 1.0),
        rng.uniform(1.0, 1.2),
    )
    array = ArrayGeometry.square(center, side)

    moving = protocol == "moving"
    roles = ["directional", "additive"] if protocol == PROTOCOLS[0] else ["directional"] * 2
    sources = []
    for role in roles:
        gain = rng.uniform(-6.0, 6.0)
        traj = None
        if role == "directional":
            traj = _sample_trajectory(rng, room, array, moving, duration)
        sources.append(SceneSource(role, gain, traj))
    return SceneSpec(room, array, tuple(sources), int(rng_seed), protocol, duration, sample_rate)


def render_scene_source(
    scene: SceneSpec, index: int, dry: Waveform, hop_s: float = 0.1
) -> tuple[Waveform, np.ndarray | None]:
    """Spatialize ``dry`` as scene source ``index``; returns (audio, azimuth labels)."""
    src = scene.sources[index]
    if src.role == "additive":
        return render_additive_source(dry, scene.array.n_mics), None
    traj = src.trajectory
    if traj.kind == "moving":
        return render_moving_source(dry, scene.room, traj, scene.array, hop_s)
    rir = simulate_rir(scene.room, traj.position(0.0, scene.array), scene.array, dry.sample_rate)
    labels = np.full(len(label_frame_centers(dry.duration, hop_s)), traj.keyframes[0].azimuth)
    return render_static_source(dry, rir), labels


_RIR_HEADER = struct.Struct("<4sIIIQ")


def save_external_rir(rir: Rir, path) -> None:
    n_ch, n_taps = rir.taps.shape
    header = _RIR_HEADER.pack(b"TQRR", 1, n_ch, rir.sample_rate, n_taps)
    atomic_write_bytes(path, header + rir.taps.astype("<f4").tobytes())


def load_external_rir(path, expected_sample_rate: int | None = None) -> Rir:
    raw = Path(path).read_bytes()
    if len(raw) < _RIR_HEADER.size:
        raise RirFormatError(f"{path}: file too short for a TQRR header")
    magic, version, n_ch, sr, n_taps = _RIR_HEADER.unpack_from(raw)
    if magic != b"TQRR" or version != 1:
        raise RirFormatError(f"{path}: bad magic/version {magic!r}/{version}")
    body = raw[_RIR_HEADER.size:]
    if len(body) != 4 * n_ch * n_taps:
        raise RirFormatError(f"{path}: expected {n_ch}x{n_taps} float32 taps")
    if expected_sample_rate is not None and sr != expected_sample_rate:
        raise ValueError(f"{path}: RIR sample rate {sr} != pipeline rate {expected_sample_rate}")
    taps = np.frombuffer(body, dtype="<f4").reshape(n_ch, n_taps)
    return Rir(taps.astype(np.float64), sr)

import numpy as np
import pytest

from tqsel.room import (
    ArrayGeometry, GeometryError, Keyframe, RirFormatError, Rir, RoomSpec, SourceTrajectory,
    label_frame_centers, load_external_rir, render_moving_source, render_static_source, sabine_absorption,
    sample_scene, save_external_rir, schroeder_rt60, simulate_rir,
)
from tqsel.signal import Waveform

SR = 16000


def test_sabine_arithmetic():
    a = sabine_absorption(RoomSpec((10, 10, 10), 0.5))
    assert a.alpha == pytest.approx(0.161 * 1000 / (600 * 0.5))
    assert a.alpha == pytest.approx(0.5367, abs=1e-4)
    assert sabine_absorption(RoomSpec((5, 5, 5), 1.0)).alpha == pytest.approx(0.1342, abs=1e-4)
    assert sabine_absorption(RoomSpec((10, 10, 10), 1e9)).alpha < 1e-9
    assert sabine_absorption(RoomSpec((10, 10, 10), 0.01)).clamped


def test_direct_path_pulse():
    room = RoomSpec((10, 10, 10), 0.5, max_image_order=0)
    mic = np.array([2.0, 5.0, 5.0])
    array = ArrayGeometry(np.stack([mic, mic + [0, 0.1, 0]]))
    rir = simulate_rir(room, mic + [3.43, 0, 0], array, SR)
    taps = rir.taps[0]
    assert np.argmax(np.abs(taps)) == 160
    assert taps[160] == pytest.approx(1 / (4 * np.pi * 3.43), rel=1e-6)


def test_equidistant_mics_have_equal_delay():
    room = RoomSpec((8, 6, 4), 0.6, max_image_order=0)
    array = ArrayGeometry(np.array([[3.0, 2.0, 1.5], [3.0, 4.0, 1.5]]))
    rir = simulate_rir(room, [5.0, 3.0, 1.5], array, SR)
    np.testing.assert_allclose(rir.taps[0], rir.taps[1], atol=1e-12)


def test_geometry_errors():
    room = RoomSpec((5, 5, 3), 0.5)
    array = ArrayGeometry.square((2.5, 2.5, 1.2), 0.1)
    with pytest.raises(GeometryError):
        simulate_rir(room, [6.0, 2.0, 1.0], array, SR)
    with pytest.raises(GeometryError):
        simulate_rir(room, [2.55, 2.55, 1.2], array, SR)
    with pytest.raises(GeometryError):
        RoomSpec((5, -1, 3), 0.5)
    with pytest.raises(GeometryError):
        ArrayGeometry(np.zeros((2, 3)))


def test_square_array_layout():
    a = ArrayGeometry.square((0, 0, 0), 0.1)
    az = np.degrees(np.arctan2(a.mic_positions[:, 1], a.mic_positions[:, 0])) % 360
    np.testing.assert_allclose(az, [45, 135, 225, 315])


def test_rt60_mid_room():
    room = RoomSpec((7.0, 6.0, 3.5), 0.7, max_image_order=30)
    array = ArrayGeometry.square((3.5, 3.0, 1.1), 0.12)
    rir = simulate_rir(room, [5.0, 4.0, 1.5], array, SR)
    est = schroeder_rt60(rir.taps[0], SR, highpass=50.0)
    assert abs(est - 0.7) / 0.7 < 0.2


def test_schroeder_on_exponential_decay():
    rng = np.random.default_rng(0)
    t = np.arange(2 * SR) / SR
    taps = rng.standard_normal(t.size) * 10 ** (-3 * t / 0.8)  # 60 dB in 0.8 s
    assert schroeder_rt60(taps, SR) == pytest.approx(0.8, rel=0.02)


def test_render_identity_and_shift():
    rng = np.random.default_rng(1)
    dry = Waveform(rng.standard_normal(800), SR)
    taps = np.zeros((4, 20))
    taps[:, 0] = 1.0
    out = render_static_source(dry, Rir(taps, SR))
    np.testing.assert_allclose(out.samples, np.repeat(dry.samples, 4, axis=0), atol=1e-12)
    taps = np.zeros((2, 20))
    taps[:, 7] = 1.0
    out = render_static_source(dry, Rir(taps, SR))
    np.testing.assert_allclose(out.samples[:, 7:], np.repeat(dry.samples[:, :-7], 2, axis=0), atol=1e-12)
    assert np.all(np.abs(out.samples[:, :7]) < 1e-12)


def test_render_energy_bound():
    rng = np.random.default_rng(2)
    dry = Waveform(rng.standard_normal(2000), SR)
    rir = Rir(rng.standard_normal((3, 50)) * np.exp(-np.arange(50) / 10), SR)
    out = render_static_source(dry, rir)
    bound = np.sum(dry.samples ** 2) * np.sum(np.abs(rir.taps), axis=1) ** 2
    assert np.all(np.sum(out.samples ** 2, axis=1) <= bound)


def test_render_rejects_rate_mismatch():
    with pytest.raises(ValueError):
        render_static_source(Waveform(np.zeros(100), SR), Rir(np.ones((2, 3)), 8000))


def _small_room():
    room = RoomSpec((6.0, 5.0, 3.0), 0.5, max_image_order=3)
    array = ArrayGeometry.square((3.0, 2.5, 1.1), 0.12)
    return room, array


def test_zero_velocity_moving_matches_static():
    room, array = _small_room()
    rng = np.random.default_rng(3)
    dry = Waveform(rng.standard_normal(SR // 2), SR)
    kf = [Keyframe(0.0, 30.0, 1.5, 0.2), Keyframe(1.0, 30.0, 1.5, 0.2)]
    moving, labels = render_moving_source(dry, room, SourceTrajectory(kf, "moving"), array)
    static = SourceTrajectory.static(30.0, 1.5, 0.2)
    rir = simulate_rir(room, static.position(0.0, array), array, SR)
    ref = render_static_source(dry, rir)
    np.testing.assert_allclose(moving.samples, ref.samples, atol=1e-6)
    np.testing.assert_allclose(labels, 30.0)


def test_wrap_crossing_trajectory():
    traj = SourceTrajectory([Keyframe(0.0, 340.0, 1.5, 0.0), Keyframe(3.0, 40.0, 1.5, 0.0)], "moving")
    az = traj.azimuth_at(label_frame_centers(3.0, 0.1))
    assert len(az) == 30
    assert np.all((az >= 0) & (az < 360))
    jumps = np.abs(np.diff(az)) > 180
    assert jumps.sum() == 1


def test_label_series_length():
    for duration in (2.0, 2.05, 10.0, 3.33):
        assert len(label_frame_centers(duration, 0.1)) == int(np.ceil(duration / 0.1 - 1e-9))


def test_sample_scene_determinism_and_ranges():
    assert sample_scene(11, "2dir") == sample_scene(11, "2dir")
    assert sample_scene(11, "2dir") != sample_scene(12, "2dir")
    for seed in range(1000):
        s = sample_scene(seed, "1dir1add", max_image_order=0)
        assert 0.5 <= s.room.rt60 <= 1.0
        assert all(5.0 <= d <= 15.0 for d in s.room.dimensions)
        m = s.array.mic_positions
        side = np.linalg.norm(m[0] - m[1])
        assert 0.10 <= side <= 0.13
        assert 1.0 <= s.array.centroid[2] <= 1.2
    two = sample_scene(5, "two_directional")
    assert len(two.sources) == 2 and all(src.role == "directional" for src in two.sources)


def test_external_rir_round_trip(tmp_path):
    rng = np.random.default_rng(4)
    rir = Rir(rng.standard_normal((4, 300)).astype(np.float32), SR)
    save_external_rir(rir, tmp_path / "r.tqrr")
    back = load_external_rir(tmp_path / "r.tqrr", SR)
    assert back.n_mics == 4
    np.testing.assert_array_equal(back.taps, rir.taps)
    with pytest.raises(ValueError):
        load_external_rir(tmp_path / "r.tqrr", 48000)
    (tmp_path / "bad.tqrr").write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(RirFormatError):
        load_external_rir(tmp_path / "bad.tqrr")

import numpy as np
import pytest

from tqsel.features import (
    expected_tdoa, gcc_phat_pair, gcc_phat_stack, lag_axis, load_feature, mic_pairs, permute_gcc, save_feature,
)
from tqsel.room import ArrayGeometry, RoomSpec, SceneSource, SceneSpec, SourceTrajectory
from tqsel.signal import ShapeError, Waveform, stft

SR = 16000


def _ncc_lag(x, y, max_lag=40):
    """Time-domain oracle: lag maximizing sum x[t] y[t + lag]."""
    lags = np.arange(-max_lag, max_lag + 1)
    core = slice(max_lag, len(x) - max_lag)
    scores = [np.dot(x[core], y[max_lag + k:len(x) - max_lag + k]) for k in lags]
    return lags[int(np.argmax(scores))]


def test_identical_channels_peak_at_zero():
    x = np.random.default_rng(0).standard_normal(8000)
    s = stft(Waveform(x, SR))
    g = gcc_phat_pair(s, s)
    assert g.shape == (s.n_frames, 96)
    assert np.all(lag_axis(96)[np.argmax(g, axis=1)] == 0)


def test_delayed_channel_positive_lag():
    x = np.random.default_rng(1).standard_normal(9000)
    m, n = x[5:], x[:-5]  # n[t] = m[t - 5]: n lags m by 5 samples
    assert _ncc_lag(m, n) == 5
    g = gcc_phat_pair(stft(Waveform(m, SR)), stft(Waveform(n, SR)))
    assert np.all(lag_axis(96)[np.argmax(g, axis=1)] == 5)


def test_lag_axis_layout():
    lags = lag_axis(96)
    assert lags[0] == -48 and lags[-1] == 47 and len(lags) == 96


def test_stack_pairs_and_shapes():
    w = Waveform(np.random.default_rng(2).standard_normal((4, 4000)), SR)
    feat = gcc_phat_stack(w)
    assert feat.pair_index == ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
    assert feat.shape == (6, 5, 96)
    assert len(mic_pairs(2)) == 1
    assert gcc_phat_stack(Waveform(np.zeros((4, 4000)), SR)).values.max() == 0.0
    with pytest.raises(ShapeError):
        gcc_phat_stack(Waveform(np.zeros(4000), SR))


def test_permute_gcc_matches_recomputation():
    rng = np.random.default_rng(3)
    x = rng.standard_normal(6000)
    w = np.stack([np.roll(x, d) for d in (0, 3, -2, 6)])
    base = gcc_phat_stack(Waveform(w, SR)).values
    perm = [2, 0, 3, 1]
    direct = gcc_phat_stack(Waveform(w[perm], SR)).values
    np.testing.assert_allclose(permute_gcc(base, perm)[..., 1:], direct[..., 1:], atol=1e-9)
    np.testing.assert_array_equal(np.argmax(permute_gcc(base, perm), -1), np.argmax(direct, -1))
    with pytest.raises(ValueError):
        permute_gcc(base, [0, 0, 1, 2])


def _scene(pos_offset):
    room = RoomSpec((200.0, 200.0, 10.0), 0.5, max_image_order=0)
    array = ArrayGeometry.square((100.0, 100.0, 1.1), 0.13)
    rel = np.asarray(pos_offset, dtype=float)
    az = np.degrees(np.arctan2(rel[1], rel[0])) % 360
    traj = SourceTrajectory.static(az, float(np.hypot(rel[0], rel[1])), float(rel[2]))
    return SceneSpec(room, array, (SceneSource("directional", 0.0, traj),), 0)


def test_expected_tdoa_geometry():
    # mics 0 and 1 share y, spaced 0.13 m along x; the perpendicular bisector is the y axis
    assert expected_tdoa(_scene((0.0, 50.0, 0.0)), (0, 1)) == pytest.approx(0.0, abs=1e-9)
    endfire = expected_tdoa(_scene((80.0, 0.065, 0.0)), (0, 1))
    assert endfire == pytest.approx(0.13 * SR / 343.0, abs=1e-3)
    assert endfire == pytest.approx(6.06, abs=0.01)
    # diagonal pair (0, 2) sees a far source along its axis, reversed sign from the other side
    assert expected_tdoa(_scene((50.0, 50.0, 0.0)), (0, 2)) > 0 > expected_tdoa(_scene((-50.0, -50.0, 0.0)), (0, 2))


def test_feature_round_trip(tmp_path):
    w = Waveform(np.random.default_rng(4).standard_normal((4, 4000)), SR)
    feat = gcc_phat_stack(w)
    save_feature(feat, tmp_path / "f.tqgc")
    back = load_feature(tmp_path / "f.tqgc")
    np.testing.assert_array_equal(back.values, feat.values.astype(np.float32))

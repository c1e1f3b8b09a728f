"""Synthetic multipath channel and gesture trajectories."""

import numpy as np
import pytest
from numpy.random import default_rng

from cirgest import channel_sim, signal
from cirgest.config import SceneConfig, default_scene

FS = 48000.0


def _scene(static_paths, snr_db=float("inf"), noise_seed=0):
    return SceneConfig(static_paths=tuple(static_paths), snr_db=snr_db, noise_seed=noise_seed)


def test_derive_seed_stable_and_distinct():
    a = channel_sim.derive_seed("traj", "circle", 0)
    assert a == channel_sim.derive_seed("traj", "circle", 0)
    assert a != channel_sim.derive_seed("traj", "circle", 1)
    assert a != channel_sim.derive_seed("noise", "circle", 0)
    assert isinstance(a, int)
    assert a >= 0


def test_dataset_labels():
    assert len(channel_sim.ALL_LABELS) == 15
    for category in ("digits", "letters", "shapes"):
        labels = channel_sim.dataset_labels(category)
        assert len(labels) == 5
    assert list(channel_sim.dataset_labels(None)) == list(channel_sim.ALL_LABELS)
    with pytest.raises(ValueError):
        channel_sim.dataset_labels("fruit")


def test_recording_seeds_stable_and_distinct():
    a = channel_sim.recording_seeds("A", 0)
    assert a == channel_sim.recording_seeds("A", 0)
    assert a != channel_sim.recording_seeds("A", 1)
    assert a != channel_sim.recording_seeds("B", 0)


def test_trajectory_deterministic():
    a = channel_sim.make_trajectory("circle", seed=3)
    b = channel_sim.make_trajectory("circle", seed=3)
    assert np.array_equal(a.positions, b.positions)
    c = channel_sim.make_trajectory("circle", seed=4)
    assert not np.array_equal(a.positions, c.positions)


def test_trajectory_shape_and_label():
    traj = channel_sim.make_trajectory("check", duration_s=0.5, seed=0)
    assert traj.gesture_label == "check"
    assert traj.positions.shape == (40, 3)
    assert traj.duration_s == 0.5


def test_trajectory_closed_curves():
    for label in ("circle", "diamond", "triangle"):
        traj = channel_sim.make_trajectory(label, seed=0)
        assert np.linalg.norm(traj.positions[0] - traj.positions[-1]) < 0.01


def test_trajectory_speed_bound():
    for label in channel_sim.ALL_LABELS:
        for seed in range(3):
            traj = channel_sim.make_trajectory(label, seed=seed)
            steps = np.linalg.norm(np.diff(traj.positions, axis=0), axis=1)
            assert steps.max() * 80.0 <= 5.0


def test_trajectory_unknown_label():
    with pytest.raises(ValueError):
        channel_sim.make_trajectory("spiral")


def test_cross_single_pen_jump():
    for seed in range(3):
        traj = channel_sim.make_trajectory("cross", seed=seed)
        steps = np.linalg.norm(np.diff(traj.positions, axis=0), axis=1)
        assert (steps > 0.5 * steps.max()).sum() == 1
        assert steps.max() > 3.0 * np.median(steps)


def test_identity_channel(signal_cfg):
    pb = signal.sounding_passband(signal_cfg, repeats=4)
    out = channel_sim.simulate(pb, _scene([(0.0, 1.0)]), None)
    assert np.allclose(out, pb, atol=1e-12)


def test_static_echo_superposition(signal_cfg):
    pb = signal.sounding_passband(signal_cfg, repeats=4)
    out = channel_sim.simulate(pb, _scene([(0.0, 1.0), (10.0 / FS, 0.5)]), None)
    expect = pb.copy()
    expect[10:] += 0.5 * pb[:-10]
    assert np.allclose(out, expect, atol=1e-9)


def test_linearity():
    rng = default_rng(0)
    x = rng.normal(size=9600)
    y = rng.normal(size=9600)
    traj = channel_sim.make_trajectory("check", duration_s=0.1, seed=0)
    scene = _scene([(0.0, 1.0), (8.0 / FS, 0.4)])
    a, b = 0.7, -1.3
    lhs = channel_sim.simulate(a * x + b * y, scene, traj)
    rhs = a * channel_sim.simulate(x, scene, traj) + b * channel_sim.simulate(y, scene, traj)
    assert np.allclose(lhs, rhs, atol=1e-9)


def test_energy_bound(signal_cfg):
    pb = signal.sounding_passband(signal_cfg, repeats=4)
    gains = (1.0, 0.5, 0.25)
    scene = _scene([(0.0, gains[0]), (5.0 / FS, gains[1]), (11.0 / FS, gains[2])])
    out = channel_sim.simulate(pb, scene, None)
    assert np.mean(out**2) <= sum(gains) ** 2 * np.mean(pb**2) + 1e-12


def test_noise_determinism(signal_cfg):
    pb = signal.sounding_passband(signal_cfg, repeats=4)
    a = channel_sim.simulate(pb, default_scene(20.0, 9), None)
    b = channel_sim.simulate(pb, default_scene(20.0, 9), None)
    assert np.array_equal(a, b)
    c = channel_sim.simulate(pb, default_scene(20.0, 10), None)
    assert not np.array_equal(a, c)


def test_noise_level_matches_snr(signal_cfg):
    pb = signal.sounding_passband(signal_cfg, repeats=12)
    clean = channel_sim.simulate(pb, default_scene(float("inf"), 0), None)
    noisy = channel_sim.simulate(pb, default_scene(20.0, 0), None)
    noise = noisy - clean
    snr = 10.0 * np.log10(np.mean(clean**2) / np.mean(noise**2))
    assert abs(snr - 20.0) < 0.5


def test_trajectory_longer_than_signal(signal_cfg):
    pb = signal.sounding_passband(signal_cfg, repeats=4)  # 0.05 s
    traj = channel_sim.make_trajectory("circle", duration_s=1.5, seed=0)
    with pytest.raises(ValueError):
        channel_sim.simulate(pb, default_scene(20.0, 0), traj)


def test_moving_reflector_changes_output():
    rng = default_rng(1)
    x = rng.normal(size=9600)
    scene = _scene([(0.0, 1.0)])
    traj = channel_sim.make_trajectory("circle", duration_s=0.1, seed=0)
    still = channel_sim.simulate(x, scene, None)
    moved = channel_sim.simulate(x, scene, traj)
    assert not np.allclose(still, moved)


def test_path_delays_shapes():
    traj = channel_sim.make_trajectory("circle", duration_s=0.5, seed=0)
    delays, gains = channel_sim.path_delays(default_scene(20.0, 0), traj)
    assert delays.shape == (40,)
    assert gains.shape == (40,)
    assert np.all(delays > 0)
    assert np.all(gains > 0)


def test_ground_truth_identity():
    h = channel_sim.ground_truth_cir(_scene([(0.0, 1.0)]), None, 0, 16)
    assert h[0] == 1.0
    assert not np.any(h[1:])


def test_ground_truth_integer_delay():
    h = channel_sim.ground_truth_cir(_scene([(10.0 / FS, 0.5)]), None, 0, 16)
    assert np.isclose(h[10], 0.5)
    assert np.isclose(np.abs(h).sum(), 0.5)


def test_ground_truth_fractional_split():
    h = channel_sim.ground_truth_cir(_scene([(10.5 / FS, 0.5)]), None, 0, 16)
    assert np.isclose(h[10], 0.25)
    assert np.isclose(h[11], 0.25)


def test_ground_truth_truncation_error():
    with pytest.raises(ValueError):
        channel_sim.ground_truth_cir(_scene([(30.0 / FS, 0.5)]), None, 0, 16)


def test_ground_truth_tracks_trajectory():
    traj = channel_sim.make_trajectory("circle", duration_s=0.5, seed=0)
    scene = default_scene(20.0, 0)
    delays, gains = channel_sim.path_delays(scene, traj)
    h = channel_sim.ground_truth_cir(scene, traj, 7, 64)
    tap = delays[7] * FS
    lo = int(np.floor(tap))
    w = tap - lo
    static = channel_sim.ground_truth_cir(scene, None, 7, 64)
    moving = h - static
    assert np.isclose(np.real(moving[lo]), gains[7] * (1.0 - w))
    assert np.isclose(np.real(moving[lo + 1]), gains[7] * w)

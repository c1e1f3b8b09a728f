"""Synthetic acoustic channel: gesture trajectories, multipath simulation,
and exact per-frame ground-truth impulse responses.

The hand is a single point scatterer moving along a parametric stroke path;
its echo delay and gain vary per output sample (linear interpolation between
frame-rate trajectory samples). Static paths model the direct feedthrough
and fixed reflectors.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from .config import SceneConfig, TrajectoryConfig
from .labels import ALL_LABELS, LABEL_INDEX, category_of

FRAME_RATE_HZ = 80.0


@dataclass(frozen=True)
class GestureTrajectory:
    gesture_label: str
    positions: np.ndarray  # (n, 3) meters, sampled at frame rate
    duration_s: float
    frame_rate_hz: float = FRAME_RATE_HZ


def derive_seed(*parts) -> int:
    """Stable cross-run seed from arbitrary key parts (never hash())."""
    text = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


# Stroke geometry per label on a [-1, 1]^2 canvas. u is lateral, v points
# away from the device, so v dominates the echo delay. Strokes are waypoint
# polylines; consecutive strokes are connected by a single-step pen jump.
# Jump lengths stay <= 2.03 canvas units so hand speed stays plausible at
# the frame rate even at +10% scale jitter.
_STROKES = {
    "1": [[(0.0, 1.0), (0.0, -1.0)]],
    "2": [[(-0.7, 0.7), (0.0, 1.0), (0.7, 0.7), (-0.7, -1.0), (0.7, -1.0)]],
    "3": [[(-0.6, 1.0), (0.5, 0.75), (-0.4, 0.1), (0.5, -0.5), (-0.6, -1.0)]],
    "4": [[(0.4, 1.0), (-0.6, -0.2), (0.6, -0.2)], [(0.45, 0.45), (0.45, -1.0)]],
    "5": [
        [
            (0.6, 1.0),
            (-0.5, 1.0),
            (-0.5, 0.1),
            (0.3, 0.3),
            (0.6, -0.3),
            (0.2, -0.9),
            (-0.5, -0.7),
        ]
    ],
    "A": [[(-0.7, -1.0), (0.0, 1.0), (0.7, -1.0)], [(-0.35, 0.0), (0.35, 0.0)]],
    "B": [
        [
            (-0.6, 1.0),
            (-0.6, -1.0),
            (0.4, -0.75),
            (0.5, -0.3),
            (-0.6, 0.0),
            (0.5, 0.3),
            (0.4, 0.75),
            (-0.6, 1.0),
        ]
    ],
    "C": [
        [
            (0.6, 0.8),
            (0.0, 1.0),
            (-0.7, 0.5),
            (-0.8, 0.0),
            (-0.7, -0.5),
            (0.0, -1.0),
            (0.6, -0.8),
        ]
    ],
    "D": [
        [(-0.6, 1.0), (-0.6, -1.0), (0.2, -0.9), (0.7, 0.0), (0.2, 0.9), (-0.6, 1.0)]
    ],
    "E": [
        [
            (0.5, 1.0),
            (-0.5, 1.0),
            (-0.5, 0.0),
            (0.3, 0.0),
            (-0.5, 0.0),
            (-0.5, -1.0),
            (0.5, -1.0),
        ]
    ],
    "diamond": [[(0.0, 1.0), (0.8, 0.0), (0.0, -1.0), (-0.8, 0.0), (0.0, 1.0)]],
    "triangle": [[(-0.8, -0.9), (0.0, 1.0), (0.8, -0.9), (-0.8, -0.9)]],
    "check": [[(-0.7, 0.1), (-0.15, -0.8), (0.8, 0.9)]],
    "cross": [[(-0.8, 0.9), (0.8, -0.9)], [(0.8, 0.9), (-0.8, -0.9)]],
}

_CLOSED = {"circle", "diamond", "triangle", "D", "B"}


def _circle_waypoints(n=48):
    th = np.linspace(0.0, 2.0 * np.pi, n + 1)
    return [list(zip(np.cos(th), np.sin(th)))]


_STROKES["circle"] = _circle_waypoints()


def _polyline_lengths(points):
    pts = np.asarray(points, dtype=np.float64)
    return np.linalg.norm(np.diff(pts, axis=0), axis=1)


def _sample_polyline(points, fracs):
    """Positions at fractional arc lengths along a waypoint polyline."""
    pts = np.asarray(points, dtype=np.float64)
    seg = _polyline_lengths(points)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    targets = np.asarray(fracs) * total
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    local = (targets - cum[idx]) / np.where(seg[idx] > 0, seg[idx], 1.0)
    return pts[idx] + local[:, None] * (pts[idx + 1] - pts[idx])


def make_trajectory(
    gesture_label: str,
    duration_s: float = 1.5,
    scale_m: float = 0.028,
    center=(0.0, 0.158, 0.02),
    seed: int = 0,
    frame_rate_hz: float = FRAME_RATE_HZ,
    jitter_frac: float = 0.10,
) -> GestureTrajectory:
    """Deterministic parametric stroke path for one gesture class.

    Seeded jitter varies start phase (closed curves), per-stroke pacing and
    overall scale by +-jitter_frac so repeated samples of one class differ.
    """
    if gesture_label not in _STROKES:
        raise ValueError(f"unknown gesture label: {gesture_label!r}")
    if duration_s <= 0 or scale_m <= 0:
        raise ValueError("duration_s and scale_m must be positive")

    rng = np.random.default_rng(derive_seed("traj", gesture_label, seed))
    scale = scale_m * (1.0 + jitter_frac * rng.uniform(-1.0, 1.0))
    cx, cy, cz = center
    cx = cx + 0.004 * rng.uniform(-1.0, 1.0)
    cy = cy + 0.004 * rng.uniform(-1.0, 1.0)

    strokes = [list(s) for s in _STROKES[gesture_label]]
    closed = gesture_label in _CLOSED and len(strokes) == 1
    phase = jitter_frac * rng.uniform(-1.0, 1.0) if closed else 0.0

    n_total = max(int(round(duration_s * frame_rate_hz)), len(strokes) * 2 + 2)
    n_jumps = len(strokes) - 1
    lengths = np.array([_polyline_lengths(s).sum() for s in strokes])
    pace = 1.0 + jitter_frac * rng.uniform(-1.0, 1.0, size=len(strokes))
    weights = lengths * pace
    draw_steps = n_total - n_jumps
    alloc = np.maximum(np.round(draw_steps * weights / weights.sum()).astype(int), 2)
    # fix rounding so counts sum exactly
    while alloc.sum() > draw_steps:
        alloc[np.argmax(alloc)] -= 1
    while alloc.sum() < draw_steps:
        alloc[np.argmin(alloc)] += 1

    uv = []
    for stroke, n_s in zip(strokes, alloc):
        if closed:
            # start the cycle at a jittered phase; endpoints still coincide
            fracs = (phase + np.linspace(0.0, 1.0, n_s)) % 1.0
            pts = _sample_polyline(stroke, fracs)
            pts[-1] = pts[0]
        else:
            pts = _sample_polyline(stroke, np.linspace(0.0, 1.0, n_s))
        uv.append(pts)
    uv = np.vstack(uv)

    positions = np.empty((len(uv), 3))
    positions[:, 0] = cx + scale * uv[:, 0]
    positions[:, 1] = cy + scale * uv[:, 1]
    positions[:, 2] = cz
    return GestureTrajectory(gesture_label, positions, duration_s, frame_rate_hz)


def path_delays(scene: SceneConfig, traj: GestureTrajectory):
    """Per-frame moving-path delay (s) and gain from scene geometry."""
    spk = np.asarray(scene.speaker_pos)
    mic = np.asarray(scene.mic_pos)
    pos = traj.positions
    r1 = np.linalg.norm(pos - spk, axis=1)
    r2 = np.linalg.norm(pos - mic, axis=1)
    tau = (r1 + r2) / scene.speed_of_sound_mps
    gain = scene.reflector_gain_ref / (r1 * r2)
    return tau, gain


def _add_fractional_path(out, x, delay_samples, gain):
    """out += gain * x delayed by a (possibly per-sample) fractional amount."""
    n = np.arange(len(x))
    d = np.floor(delay_samples).astype(int)
    frac = delay_samples - d
    i0 = n - d
    i1 = i0 - 1
    v0 = np.where(i0 >= 0, x[np.clip(i0, 0, None)], 0.0)
    v1 = np.where(i1 >= 0, x[np.clip(i1, 0, None)], 0.0)
    out += gain * ((1.0 - frac) * v0 + frac * v1)


def simulate(
    passband: np.ndarray,
    scene: SceneConfig,
    traj: GestureTrajectory | None,
    sample_rate_hz: float = 48000.0,
) -> np.ndarray:
    """Received passband signal: static paths + moving scatterer + AWGN.

    Noise power is set from scene.snr_db relative to the clean (noiseless)
    output power, drawn from scene.noise_seed.
    """
    x = np.asarray(passband, dtype=np.float64)
    fs = sample_rate_hz
    out = np.zeros_like(x)
    for delay_s, gain in scene.static_paths:
        _add_fractional_path(out, x, np.full(len(x), delay_s * fs), gain)

    if traj is not None:
        n_frames = len(traj.positions)
        frame_len = fs / traj.frame_rate_hz
        if (n_frames - 1) * frame_len > len(x):
            raise ValueError("trajectory longer than the transmit signal")
        tau, gain = path_delays(scene, traj)
        t_frames = np.arange(n_frames) / traj.frame_rate_hz
        t = np.arange(len(x)) / fs
        tau_t = np.interp(t, t_frames, tau)
        gain_t = np.interp(t, t_frames, gain)
        _add_fractional_path(out, x, tau_t * fs, gain_t)

    if np.isfinite(scene.snr_db):
        clean_power = np.mean(out**2)
        if clean_power > 0:
            noise_power = clean_power / (10.0 ** (scene.snr_db / 10.0))
            rng = np.random.default_rng(scene.noise_seed)
            out = out + rng.normal(0.0, np.sqrt(noise_power), size=len(out))
    return out


def ground_truth_cir(
    scene: SceneConfig,
    traj: GestureTrajectory | None,
    frame_index: int,
    tap_count: int,
    sample_rate_hz: float = 48000.0,
) -> np.ndarray:
    """Exact tap vector for one frame: static paths plus the moving path at
    its frame-time delay, fractional delays split across neighboring taps
    by the same linear weights the simulator applies."""
    taps = np.zeros(tap_count, dtype=np.complex128)

    def put(delay_samples, gain):
        d = int(np.floor(delay_samples))
        frac = delay_samples - d
        if d >= tap_count or (frac > 0 and d + 1 >= tap_count):
            raise ValueError(
                f"path delay {delay_samples:.2f} samples exceeds tap_count {tap_count}"
            )
        taps[d] += gain * (1.0 - frac)
        if frac > 0:
            taps[d + 1] += gain * frac

    for delay_s, gain in scene.static_paths:
        put(delay_s * sample_rate_hz, gain)
    if traj is not None:
        if not 0 <= frame_index < len(traj.positions):
            raise ValueError(f"frame_index {frame_index} outside trajectory")
        tau, gain = path_delays(scene, traj)
        put(tau[frame_index] * sample_rate_hz, gain[frame_index])
    return taps


def dataset_labels(category: str | None = None):
    if category is None:
        return list(ALL_LABELS)
    labels = [lab for lab in ALL_LABELS if category_of(lab) == category]
    if not labels:
        raise ValueError(f"unknown category: {category!r}")
    return labels


def recording_seeds(label: str, sample_seed: int, base_seed: int = 0):
    """Disjoint deterministic seeds for trajectory jitter and channel noise."""
    traj_seed = derive_seed("sample-traj", base_seed, label, sample_seed)
    noise_seed = derive_seed("sample-noise", base_seed, label, sample_seed)
    return traj_seed, noise_seed

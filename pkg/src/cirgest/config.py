"""Run configuration: typed config blocks, JSON loading, canonical hashing."""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class SignalConfig:
    sample_rate_hz: float = 48000.0
    upsample_factor: int = 12
    lowpass_cutoff_hz: float = 2000.0
    carrier_hz: float = 20000.0
    bandpass_halfwidth_hz: float = 2500.0
    filter_tap_count: int = 255
    tsc_index: int = 0
    frame_bits: int = 50

    def __post_init__(self):
        if self.filter_tap_count % 2 != 1 or self.filter_tap_count <= 0:
            raise ValueError("filter_tap_count must be odd and positive")
        if self.upsample_factor < 1:
            raise ValueError("upsample_factor must be >= 1")
        if self.carrier_hz + self.bandpass_halfwidth_hz >= self.sample_rate_hz / 2:
            raise ValueError("carrier band exceeds Nyquist")
        if not (0 < self.lowpass_cutoff_hz < self.sample_rate_hz / 2):
            raise ValueError("lowpass cutoff out of range")

    @property
    def frame_length(self) -> int:
        return self.frame_bits * self.upsample_factor

    @property
    def frame_rate_hz(self) -> float:
        return self.sample_rate_hz / self.frame_length


@dataclass(frozen=True)
class SceneConfig:
    speaker_pos: tuple = (-0.025, 0.0, 0.0)
    mic_pos: tuple = (0.025, 0.0, 0.0)
    # (delay_s, gain) pairs; first entry is the direct path
    static_paths: tuple = ()
    reflector_gain_ref: float = 0.02
    speed_of_sound_mps: float = 343.0
    snr_db: float = 20.0
    noise_seed: int = 0

    def __post_init__(self):
        if not self.static_paths:
            raise ValueError("at least one static path (direct) required")
        for delay_s, _gain in self.static_paths:
            if delay_s < 0:
                raise ValueError("static path delay must be >= 0")


@dataclass(frozen=True)
class TrajectoryConfig:
    # canvas center sits center_depth_m in front of the device midpoint;
    # strokes span +-stroke_halfwidth_m laterally and in depth
    center_depth_m: float = 0.158
    stroke_halfwidth_m: float = 0.028
    plane_height_m: float = 0.02
    duration_s: float = 1.5
    jitter_frac: float = 0.10


@dataclass(frozen=True)
class RunConfig:
    signal: SignalConfig = field(default_factory=SignalConfig)
    scene: SceneConfig = field(default_factory=lambda: default_scene())
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    split_ratio: float = 0.8
    split_seed: int = 0
    tap_count: int = 64
    provider: str = "mock:nearest"
    knn_k: int = 5
    svm_lambda: float = 1e-4
    svm_epochs: int = 50
    rf_trees: int = 100
    rf_max_depth: int = 20
    rf_min_leaf: int = 1


def default_scene(snr_db: float = 20.0, noise_seed: int = 0) -> SceneConfig:
    """Desk scene: strong direct path plus a comb of close static reflectors.

    The direct path keeps synchronization locked; the reflector comb occupies
    the early taps, below the band swept by hand motion, and deepens the frame
    amplitude range so that per-frame normalization jitter stays small relative
    to the static channel.
    """
    c = 343.0
    fs = 48000.0
    direct = 0.05 / c
    echoes = tuple((direct + t / fs, 0.6) for t in (4, 8, 12, 16, 20))
    return SceneConfig(
        static_paths=((direct, 1.0),) + echoes,
        snr_db=snr_db,
        noise_seed=noise_seed,
    )


def _to_jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {k: _to_jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _to_jsonable(v) for k, v in obj.items()}
    return obj


def config_to_dict(cfg: RunConfig) -> dict:
    return _to_jsonable(cfg)


def config_hash(cfg: RunConfig) -> str:
    """sha256 over the canonical JSON form; stable across field ordering."""
    canon = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _tupled(x):
    if isinstance(x, list):
        return tuple(_tupled(v) for v in x)
    return x


def load_config(path: str | Path | None, **overrides) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus keyword overrides.

    The JSON file may carry any subset of the blocks: signal, scene,
    trajectory, and the flat top-level fields.
    """
    data = {}
    if path is not None:
        with open(path) as f:
            data = json.load(f)

    def block(name, cls, default):
        raw = dict(data.get(name, {}))
        raw.update(overrides.pop(name, {}))
        if not raw:
            return default
        merged = dataclasses.asdict(default)
        merged.update(raw)
        merged = {k: _tupled(v) for k, v in merged.items()}
        return cls(**merged)

    base = RunConfig()
    signal = block("signal", SignalConfig, base.signal)
    scene = block("scene", SceneConfig, base.scene)
    trajectory = block("trajectory", TrajectoryConfig, base.trajectory)

    flat = {
        k: v for k, v in data.items() if k not in ("signal", "scene", "trajectory")
    }
    flat.update(overrides)
    known = {f.name for f in dataclasses.fields(RunConfig)}
    bad = set(flat) - known
    if bad:
        raise ValueError(f"unknown config fields: {sorted(bad)}")
    return RunConfig(signal=signal, scene=scene, trajectory=trajectory, **flat)

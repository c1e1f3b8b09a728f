"""Shared fixtures: signal config, loopback template, a small on-disk library."""

import numpy as np
import pytest
from numpy.random import default_rng

from cirgest import dataset, receiver, signal
from cirgest.config import SignalConfig

LETTER_LABELS = ("A", "B", "C", "D", "E")


@pytest.fixture(scope="session")
def signal_cfg():
    return SignalConfig()


@pytest.fixture(scope="session")
def loopback_template(signal_cfg):
    """Steady-state complex baseband of one frame, as used for sync and LS."""
    loop = signal.downconvert(signal.sounding_passband(signal_cfg, repeats=4), signal_cfg)
    frame = signal_cfg.frame_length
    phase = receiver.template_phase(signal_cfg)
    return loop[2 * frame + phase : 3 * frame + phase]


@pytest.fixture(scope="session")
def template01(loopback_template):
    return receiver.minmax01(np.real(loopback_template))


def make_raster(rng, rows=64, cols=100):
    return rng.integers(0, 256, size=(rows, cols), dtype=np.uint8)


@pytest.fixture(scope="session")
def letters_fixture(tmp_path_factory):
    """5 labels x 5 rasters on disk, 4 train + 1 test each, plus the library."""
    root = tmp_path_factory.mktemp("letters")
    rng = default_rng(42)
    rows = []
    for label in LETTER_LABELS:
        for i in range(5):
            sample_id = f"letters_{label}_{i:03d}"
            dataset.write_image(root / f"{sample_id}.png", make_raster(rng))
            rows.append(
                {
                    "sample_id": sample_id,
                    "gesture_label": label,
                    "category": "letters",
                    "image_path": f"{sample_id}.png",
                    "split": "train" if i < 4 else "test",
                }
            )
    lib = dataset.build_library(rows, "letters", image_root=root)
    return {"lib": lib, "rows": rows, "root": root}

"""Sample persistence and features: JSONL manifests, stratified splitting,
64x64 area-average feature vectors, per-class vector libraries."""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .channel_sim import derive_seed
from .labels import CATEGORIES, category_of

FEATURE_SIDE = 64
FEATURE_DIM = FEATURE_SIDE * FEATURE_SIDE
LIBRARY_FORMAT = "cirgest-library"
LIBRARY_VERSION = 1


def _box_weights(src: int, dst: int) -> np.ndarray:
    """Exact area-overlap resampling weights; each output row sums to 1."""
    edges = np.linspace(0.0, float(src), dst + 1)
    w = np.zeros((dst, src))
    for d in range(dst):
        a, b = edges[d], edges[d + 1]
        for s in range(int(math.floor(a)), min(int(math.ceil(b)), src)):
            w[d, s] = min(b, s + 1.0) - max(a, float(s))
    return w * (dst / src)


def resize_area(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    img = np.asarray(image, dtype=np.float64)
    wr = _box_weights(img.shape[0], out_h)
    wc = _box_weights(img.shape[1], out_w)
    return wr @ img @ wc.T


def extract_features(image: np.ndarray) -> np.ndarray:
    """Grayscale -> 64x64 area-average resize -> /255 -> row-major flatten."""
    img = np.asarray(image)
    if img.size == 0:
        raise ValueError("empty image")
    if img.ndim == 3:
        img = img.mean(axis=2)
    elif img.ndim != 2:
        raise ValueError(f"expected 2-D or 3-D image, got shape {img.shape}")
    small = resize_area(img.astype(np.float64), FEATURE_SIDE, FEATURE_SIDE)
    return (small / 255.0).reshape(-1)


def write_image(path, raster: np.ndarray) -> None:
    Image.fromarray(np.asarray(raster, dtype=np.uint8), mode="L").save(path, format="PNG")


def read_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("L"), dtype=np.uint8)


def read_manifest(path) -> list:
    rows = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def write_manifest(path, rows) -> None:
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")


def split(rows: list, ratio: float, seed: int) -> list:
    """Stratified per-class split: ceil(ratio * n) train, remainder test.

    Returns new rows with the split field assigned; deterministic per seed.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    by_label = {}
    for i, row in enumerate(rows):
        by_label.setdefault(row["gesture_label"], []).append(i)
    out = [dict(row) for row in rows]
    for label, idxs in sorted(by_label.items()):
        if len(idxs) < 2:
            raise ValueError(f"class {label!r} has fewer than 2 samples")
        rng = np.random.default_rng(derive_seed("split", seed, label))
        order = rng.permutation(len(idxs))
        n_train = math.ceil(ratio * len(idxs))
        for rank, j in enumerate(order):
            out[idxs[j]]["split"] = "train" if rank < n_train else "test"
    return out


@dataclass
class VectorLibrary:
    category: str
    labels: tuple
    vectors: dict = field(default_factory=dict)  # label -> (n, 4096) float32
    sample_ids: dict = field(default_factory=dict)  # label -> list of ids

    def size(self) -> int:
        return sum(len(v) for v in self.vectors.values())

    def entries(self):
        """(label, sample_id, vector) triples in canonical order."""
        for label in self.labels:
            for sid, vec in zip(self.sample_ids[label], self.vectors[label]):
                yield label, sid, vec


def build_library(rows: list, category: str, image_root=".") -> VectorLibrary:
    """Feature-extract every train-split sample of a category, grouped by
    label. Test-split rows are never admitted (leakage guard)."""
    if category not in CATEGORIES:
        raise ValueError(f"unknown category: {category!r}")
    labels = CATEGORIES[category]
    root = Path(image_root)
    lib = VectorLibrary(category=category, labels=labels)
    grouped = {label: [] for label in labels}
    for row in rows:
        if row.get("category") != category or row.get("split") != "train":
            continue
        grouped[row["gesture_label"]].append(row)
    for label in labels:
        group = sorted(grouped[label], key=lambda r: r["sample_id"])
        if not group:
            raise ValueError(f"no train samples for label {label!r}")
        vecs, ids = [], []
        for row in group:
            img = read_image(root / row["image_path"])
            vecs.append(extract_features(img).astype(np.float32))
            ids.append(row["sample_id"])
        lib.vectors[label] = np.stack(vecs)
        lib.sample_ids[label] = ids
    return lib


def save_library(lib: VectorLibrary, path) -> None:
    """Versioned JSON header line followed by raw little-endian float32."""
    header = {
        "format": LIBRARY_FORMAT,
        "version": LIBRARY_VERSION,
        "category": lib.category,
        "feature_dim": FEATURE_DIM,
        "classes": [
            {"label": label, "sample_ids": lib.sample_ids[label]}
            for label in lib.labels
        ],
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode())
        f.write(b"\n")
        for label in lib.labels:
            f.write(np.ascontiguousarray(lib.vectors[label], dtype="<f4").tobytes())


def load_library(path) -> VectorLibrary:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        if header.get("format") != LIBRARY_FORMAT:
            raise ValueError("not a vector library file")
        if header.get("version") != LIBRARY_VERSION:
            raise ValueError(f"unsupported library version {header.get('version')}")
        labels = tuple(c["label"] for c in header["classes"])
        lib = VectorLibrary(category=header["category"], labels=labels)
        dim = header["feature_dim"]
        for cls in header["classes"]:
            n = len(cls["sample_ids"])
            raw = f.read(4 * dim * n)
            if len(raw) != 4 * dim * n:
                raise ValueError("truncated library payload")
            lib.vectors[cls["label"]] = np.frombuffer(raw, dtype="<f4").reshape(n, dim).copy()
            lib.sample_ids[cls["label"]] = list(cls["sample_ids"])
    return lib


def library_matrix(lib: VectorLibrary):
    """Stacked (vectors, labels, sample_ids) across classes in canonical order."""
    vecs, labels, ids = [], [], []
    for label, sid, vec in lib.entries():
        vecs.append(vec)
        labels.append(label)
        ids.append(sid)
    return np.stack(vecs), labels, ids


def validate_record(row: dict) -> None:
    for key in ("sample_id", "gesture_label", "category"):
        if key not in row:
            raise ValueError(f"manifest row missing {key!r}")
    if category_of(row["gesture_label"]) != row["category"]:
        raise ValueError(
            f"label {row['gesture_label']!r} does not belong to category {row['category']!r}"
        )

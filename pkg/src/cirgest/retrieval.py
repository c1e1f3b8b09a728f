"""Exhaustive nearest-neighbor search over a vector library.

Exact linear scan; canonical (distance, sample_id) ordering makes results
independent of library insertion order.
"""

from dataclasses import dataclass

import numpy as np

from .dataset import VectorLibrary


@dataclass(frozen=True)
class RetrievedSample:
    sample_id: str
    gesture_label: str
    distance: float
    image_path: str = ""


def euclidean(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.sum((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2)))


def _class_distances(query: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    q = np.asarray(query, dtype=np.float64)
    d2 = np.sum((vectors.astype(np.float64) - q) ** 2, axis=1)
    return np.sqrt(d2)


def retrieve_per_class(query: np.ndarray, lib: VectorLibrary) -> list:
    """The single closest train vector of every class, ascending by distance.

    Ties break lexicographically by sample_id, inside a class and across the
    final ordering.
    """
    results = []
    for label in lib.labels:
        vectors = lib.vectors.get(label)
        if vectors is None or len(vectors) == 0:
            raise ValueError(f"library has no vectors for label {label!r}")
        dists = _class_distances(query, vectors)
        ids = lib.sample_ids[label]
        best = min(range(len(ids)), key=lambda i: (dists[i], ids[i]))
        results.append(RetrievedSample(ids[best], label, float(dists[best])))
    results.sort(key=lambda r: (r.distance, r.sample_id))
    return results


def knn_query(query: np.ndarray, lib: VectorLibrary, k: int) -> list:
    """Global k nearest across all classes, ascending, sample_id tie-break."""
    if k <= 0:
        raise ValueError("k must be positive")
    if k > lib.size():
        raise ValueError(f"k={k} exceeds library size {lib.size()}")
    flat = []
    for label in lib.labels:
        dists = _class_distances(query, lib.vectors[label])
        flat.extend(
            (float(d), sid, label)
            for d, sid in zip(dists, lib.sample_ids[label])
        )
    flat.sort(key=lambda t: (t[0], t[1]))
    return [RetrievedSample(sid, label, d) for d, sid, label in flat[:k]]

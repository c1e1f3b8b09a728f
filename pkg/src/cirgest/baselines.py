"""Classical classifiers over feature vectors, implemented from scratch:
k-nearest-neighbor voting, one-vs-rest linear SVM trained by the Pegasos
subgradient schedule, and a random forest of Gini CART trees.

All training is seeded and single-threaded; identical inputs and seed give
bit-identical models.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .channel_sim import derive_seed

MODEL_FORMAT = "cirgest-model"
MODEL_VERSION = 1


@dataclass
class TrainedModel:
    kind: str
    label_set: tuple
    params: dict = field(default_factory=dict)


def _as_matrix(vectors) -> np.ndarray:
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("train_vectors must be 2-D")
    return x


def train(
    kind: str,
    train_vectors,
    labels,
    hyperparams: dict | None = None,
    seed: int = 0,
    sample_ids=None,
) -> TrainedModel:
    hp = dict(hyperparams or {})
    x = _as_matrix(train_vectors)
    y = list(labels)
    if len(y) != len(x):
        raise ValueError("vector/label count mismatch")
    label_set = tuple(sorted(set(y)))
    if len(label_set) < 2:
        raise ValueError("need at least 2 classes to train")
    if sample_ids is None:
        sample_ids = [f"s{i:06d}" for i in range(len(x))]

    if kind == "knn":
        return TrainedModel(
            "knn",
            label_set,
            {
                "k": int(hp.get("k", 5)),
                "vectors": x.astype(np.float32),
                "labels": y,
                "sample_ids": list(sample_ids),
            },
        )
    if kind == "svm":
        return _train_svm(x, y, label_set, hp, seed)
    if kind == "rf":
        return _train_rf(x, y, label_set, hp, seed)
    raise ValueError(f"unknown model kind: {kind!r}")


# ---------------------------------------------------------------- kNN


def _knn_neighbors(model: TrainedModel, query: np.ndarray) -> list:
    x = model.params["vectors"].astype(np.float64)
    d = np.sqrt(np.sum((x - np.asarray(query, dtype=np.float64)) ** 2, axis=1))
    ids = model.params["sample_ids"]
    order = sorted(range(len(d)), key=lambda i: (d[i], ids[i]))
    return [(d[i], model.params["labels"][i]) for i in order]


def _classify_knn(model: TrainedModel, query: np.ndarray):
    k = min(model.params["k"], len(model.params["labels"]))
    near = _knn_neighbors(model, query)[:k]
    votes = {}
    for dist, label in near:
        votes.setdefault(label, []).append(dist)
    top = max(len(v) for v in votes.values())
    tied = sorted(label for label, v in votes.items() if len(v) == top)
    if len(tied) > 1:
        # tie broken by smallest mean neighbor distance, then label order
        tied.sort(key=lambda lab: (float(np.mean(votes[lab])), lab))
    label = tied[0]
    return label, top / k


# ---------------------------------------------------------------- SVM


def _train_svm(x, y, label_set, hp, seed):
    lam = float(hp.get("lambda", 1e-4))
    epochs = int(hp.get("epochs", 50))
    n, dim = x.shape
    xa = np.column_stack([x, np.ones(n)])  # bias folded in as a constant feature
    weights = np.zeros((len(label_set), dim + 1))
    for ci, cls in enumerate(label_set):
        sign = np.where(np.array(y) == cls, 1.0, -1.0)
        rng = np.random.default_rng(derive_seed("svm", seed, cls))
        w = np.zeros(dim + 1)
        t = 0
        for _epoch in range(epochs):
            for i in rng.permutation(n):
                t += 1
                eta = 1.0 / (lam * t)
                margin = sign[i] * (w @ xa[i])
                w *= 1.0 - eta * lam
                if margin < 1.0:
                    w += eta * sign[i] * xa[i]
        weights[ci] = w
    return TrainedModel(
        "svm",
        label_set,
        {"weights": weights[:, :-1], "bias": weights[:, -1],
         "lambda": lam, "epochs": epochs},
    )


def _classify_svm(model: TrainedModel, query: np.ndarray):
    q = np.asarray(query, dtype=np.float64)
    margins = model.params["weights"] @ q + model.params["bias"]
    best = int(np.argmax(margins))
    z = np.exp(margins - margins.max())
    return model.label_set[best], float(z[best] / z.sum())


# ---------------------------------------------------------------- RF


def _gini_split(xf: np.ndarray, y_idx: np.ndarray, n_classes: int):
    """Best (feature, threshold, impurity) over a feature block, vectorized.

    xf: (n, f) candidate feature values; y_idx: (n,) class indices.
    """
    n, f = xf.shape
    order = np.argsort(xf, axis=0, kind="stable")
    xs = np.take_along_axis(xf, order, axis=0)
    ys = y_idx[order]  # (n, f)
    onehot = (ys[:, :, None] == np.arange(n_classes)).astype(np.float64)
    left = np.cumsum(onehot, axis=0)  # (n, f, c) counts left of each cut
    total = left[-1]  # (f, c)
    nl = np.arange(1, n + 1, dtype=np.float64)[:, None]
    nr = n - nl
    with np.errstate(invalid="ignore", divide="ignore"):
        gl = 1.0 - np.sum((left / nl[:, :, None]) ** 2, axis=2)
        right = total[None] - left
        gr = 1.0 - np.sum((right / np.maximum(nr, 1.0)[:, :, None]) ** 2, axis=2)
        score = (nl * gl + nr * gr) / n  # (n, f)
    valid = xs[:-1] < xs[1:]  # a cut needs distinct neighbor values
    score = score[:-1]
    score[~valid] = np.inf
    if not np.isfinite(score).any():
        return None
    flat = int(np.argmin(score))
    cut, feat = divmod(flat, f)
    threshold = 0.5 * (xs[cut, feat] + xs[cut + 1, feat])
    return feat, float(threshold), float(score[cut, feat])


def _grow_tree(x, y_idx, n_classes, rng, max_depth, min_leaf, n_candidates):
    def leaf(idx):
        counts = np.bincount(y_idx[idx], minlength=n_classes).astype(np.float64)
        return {"leaf": (counts / counts.sum()).tolist()}

    def grow(idx, depth):
        node_y = y_idx[idx]
        if (
            depth >= max_depth
            or len(idx) < 2 * min_leaf
            or np.all(node_y == node_y[0])
        ):
            return leaf(idx)
        feats = rng.choice(x.shape[1], size=n_candidates, replace=False)
        found = _gini_split(x[np.ix_(idx, feats)], node_y, n_classes)
        if found is None:
            return leaf(idx)
        f_local, threshold, _ = found
        feature = int(feats[f_local])
        mask = x[idx, feature] <= threshold
        li, ri = idx[mask], idx[~mask]
        if len(li) < min_leaf or len(ri) < min_leaf:
            return leaf(idx)
        return {
            "feature": feature,
            "threshold": threshold,
            "left": grow(li, depth + 1),
            "right": grow(ri, depth + 1),
        }

    return grow(np.arange(len(x)), 0)


def _train_rf(x, y, label_set, hp, seed):
    n_trees = int(hp.get("n_trees", 100))
    max_depth = int(hp.get("max_depth", 20))
    min_leaf = int(hp.get("min_leaf", 1))
    n_candidates = int(hp.get("n_candidates", max(1, int(round(np.sqrt(x.shape[1]))))))
    n_candidates = min(n_candidates, x.shape[1])
    label_index = {lab: i for i, lab in enumerate(label_set)}
    y_idx = np.array([label_index[lab] for lab in y])
    trees = []
    oob = []
    for ti in range(n_trees):
        rng = np.random.default_rng(derive_seed("rf", seed, ti))
        boot = rng.integers(0, len(x), size=len(x))
        tree = _grow_tree(
            x[boot], y_idx[boot], len(label_set), rng, max_depth, min_leaf, n_candidates
        )
        trees.append(tree)
        oob.append(sorted(set(range(len(x))) - set(boot.tolist())))
    return TrainedModel(
        "rf",
        label_set,
        {"trees": trees, "oob_indices": oob, "n_trees": n_trees,
         "max_depth": max_depth, "min_leaf": min_leaf},
    )


def _tree_leaf(tree: dict, q: np.ndarray) -> np.ndarray:
    node = tree
    while "leaf" not in node:
        node = node["left"] if q[node["feature"]] <= node["threshold"] else node["right"]
    return np.asarray(node["leaf"])


def _classify_rf(model: TrainedModel, query: np.ndarray):
    q = np.asarray(query, dtype=np.float64)
    dist = np.mean([_tree_leaf(t, q) for t in model.params["trees"]], axis=0)
    best = int(np.argmax(dist))
    return model.label_set[best], float(dist[best])


# ---------------------------------------------------------------- common


def classify(model: TrainedModel, query: np.ndarray):
    """Returns (gesture_label, confidence score in [0, 1])."""
    if model.kind == "knn":
        return _classify_knn(model, query)
    if model.kind == "svm":
        return _classify_svm(model, query)
    if model.kind == "rf":
        return _classify_rf(model, query)
    raise ValueError(f"unknown model kind: {model.kind!r}")


def save_model(model: TrainedModel, path) -> None:
    """JSON header + raw float64 payload; reload reproduces bit-identical
    classification behavior."""
    arrays = {}
    header_params = {}
    for key, val in model.params.items():
        if isinstance(val, np.ndarray):
            arrays[key] = np.ascontiguousarray(val, dtype=np.float64)
            header_params[key] = {"__array__": list(val.shape)}
        else:
            header_params[key] = val
    header = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": model.kind,
        "label_set": list(model.label_set),
        "params": header_params,
        "array_order": sorted(arrays),
    }
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode())
        f.write(b"\n")
        for name in sorted(arrays):
            f.write(arrays[name].astype("<f8").tobytes())


def load_model(path) -> TrainedModel:
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        if header.get("format") != MODEL_FORMAT:
            raise ValueError("not a model file")
        params = dict(header["params"])
        for name in header["array_order"]:
            shape = tuple(params[name]["__array__"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(8 * count)
            params[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    model = TrainedModel(header["kind"], tuple(header["label_set"]), params)
    if model.kind == "knn":
        model.params["vectors"] = model.params["vectors"].astype(np.float32)
    return model

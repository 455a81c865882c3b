"""From-scratch random forest over the four severity classes.

Each tree trains on a bootstrap resample using Gini-impurity splits over a
random feature subset per node; candidate thresholds are midpoints of adjacent
sorted unique values. Per-tree streams derive from (seed, tree index), so
parallel and serial training produce identical models, and the whole model is
a pure function of (data, params). Prediction is a majority vote with ties
broken toward the lower severity level.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .features import Normalizer, apply_normalizer, fit_normalizer
from .rangeimage import SeverityLabel
from .seeds import rng_for

N_CLASSES = 4
FORMAT_VERSION = "ravelforest/v1"

_MIN_GAIN = 1e-12


class TrainingError(ValueError):
    """Training input cannot produce a meaningful model."""


class ModelFormatError(ValueError):
    """Model file cannot be parsed; no partial model is constructed."""


class UnsupportedVersionError(ModelFormatError):
    """Model file has an unknown format version."""


@dataclass(frozen=True)
class ForestParams:
    tree_count: int = 20
    max_depth: int = 16
    min_samples_leaf: int = 2
    features_per_split: int = 24
    seed: int = 0

    def __post_init__(self):
        if self.tree_count < 1:
            raise ValueError("tree_count must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.features_per_split < 1:
            raise ValueError("features_per_split must be >= 1")


@dataclass
class DecisionNode:
    """Internal split (feature/threshold/children) or leaf (class counts)."""

    feature_index: int = -1
    threshold: float = 0.0
    left: "DecisionNode | None" = None
    right: "DecisionNode | None" = None
    class_counts: tuple[int, ...] | None = None

    @property
    def is_leaf(self) -> bool:
        return self.class_counts is not None

    def __post_init__(self):
        if self.class_counts is not None:
            if len(self.class_counts) != N_CLASSES or sum(self.class_counts) == 0:
                raise ValueError("leaf class_counts must be 4 counts, not all zero")
        else:
            if self.left is None or self.right is None or self.feature_index < 0:
                raise ValueError("internal node needs feature_index and both children")


@dataclass(frozen=True, eq=False)
class ForestModel:
    params: ForestParams
    trees: tuple[DecisionNode, ...]
    normalizer: Normalizer
    format_version: str = FORMAT_VERSION

    def __post_init__(self):
        if len(self.trees) != self.params.tree_count:
            raise ValueError(
                f"model holds {len(self.trees)} trees but params say {self.params.tree_count}"
            )

    @property
    def n_features(self) -> int:
        return self.normalizer.dim


def train(matrix, labels, params: ForestParams = ForestParams()) -> ForestModel:
    """Train a forest on raw feature rows; normalization is fit internally."""
    X = np.ascontiguousarray(matrix, dtype=np.float64)
    y = np.asarray([int(v) for v in labels], dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("matrix rows and labels must align")
    if X.shape[0] < 2:
        raise TrainingError(f"need at least 2 samples, got {X.shape[0]}")
    if y.min() < 0 or y.max() >= N_CLASSES:
        raise ValueError("labels must be severity levels 0..3")
    if np.unique(y).size < 2:
        raise TrainingError("training data contains a single class")

    normalizer = fit_normalizer(X)
    Xn = apply_normalizer(normalizer, X)
    n = X.shape[0]
    trees = []
    for t in range(params.tree_count):
        rng = rng_for(params.seed, "tree", t)
        bootstrap = rng.integers(0, n, size=n)
        trees.append(_grow(Xn, y, bootstrap, 0, params, rng))
    return ForestModel(params=params, trees=tuple(trees), normalizer=normalizer)


def _leaf(y: np.ndarray, idx: np.ndarray) -> DecisionNode:
    counts = np.bincount(y[idx], minlength=N_CLASSES)
    return DecisionNode(class_counts=tuple(int(c) for c in counts))


def _grow(Xn, y, idx, depth, params: ForestParams, rng) -> DecisionNode:
    n = idx.size
    counts = np.bincount(y[idx], minlength=N_CLASSES)
    if (depth >= params.max_depth
            or n < 2 * params.min_samples_leaf
            or counts.max() == n):
        return _leaf(y, idx)
    k = min(params.features_per_split, Xn.shape[1])
    feats = rng.choice(Xn.shape[1], size=k, replace=False)
    split = _best_split(Xn, y, idx, feats, params.min_samples_leaf)
    if split is None:
        return _leaf(y, idx)
    feature, threshold = split
    mask = Xn[idx, feature] <= threshold
    left_idx = idx[mask]
    right_idx = idx[~mask]
    return DecisionNode(
        feature_index=int(feature),
        threshold=float(threshold),
        left=_grow(Xn, y, left_idx, depth + 1, params, rng),
        right=_grow(Xn, y, right_idx, depth + 1, params, rng),
    )


def _best_split(Xn, y, idx, feats, min_leaf):
    """Vectorized Gini sweep over all candidate features at once.

    Ties resolve to the lowest candidate position, then the earliest drawn
    feature, keeping training deterministic.
    """
    n = idx.size
    sub = Xn[np.ix_(idx, feats)]
    order = np.argsort(sub, axis=0, kind="stable")
    svals = np.take_along_axis(sub, order, axis=0)
    sy = y[idx][order]

    onehot = (sy[:, :, None] == np.arange(N_CLASSES)).astype(np.float64)
    cum = np.cumsum(onehot, axis=0)
    total = cum[-1]

    left = cum[:-1]
    right = total[None, :, :] - left
    nl = np.arange(1, n, dtype=np.float64)[:, None]
    nr = n - nl
    gini_left = 1.0 - ((left / nl[:, :, None]) ** 2).sum(axis=2)
    gini_right = 1.0 - ((right / nr[:, :, None]) ** 2).sum(axis=2)
    weighted = (nl * gini_left + nr * gini_right) / n

    valid = (svals[1:] != svals[:-1]) & (nl >= min_leaf) & (nr >= min_leaf)
    weighted[~valid] = np.inf

    flat = int(np.argmin(weighted))
    pos, col = np.unravel_index(flat, weighted.shape)
    best = weighted[pos, col]
    if not np.isfinite(best):
        return None
    parent = 1.0 - ((total[0] / n) ** 2).sum()
    if parent - best <= _MIN_GAIN:
        return None
    lo_val = svals[pos, col]
    hi_val = svals[pos + 1, col]
    threshold = (lo_val + hi_val) / 2.0
    if not lo_val < threshold < hi_val:
        # adjacent floats: the midpoint rounds onto an endpoint, which would
        # leave one side empty under <=; split exactly at the lower value
        threshold = lo_val
    return int(feats[col]), float(threshold)


def _tree_classes(root: DecisionNode, Xn: np.ndarray) -> np.ndarray:
    """Leaf argmax class per row, via batched partition traversal."""
    n = Xn.shape[0]
    out = np.empty(n, dtype=np.int64)
    stack = [(root, np.arange(n))]
    while stack:
        node, rows = stack.pop()
        if rows.size == 0:
            continue
        if node.is_leaf:
            out[rows] = int(np.argmax(node.class_counts))
            continue
        mask = Xn[rows, node.feature_index] <= node.threshold
        stack.append((node.left, rows[mask]))
        stack.append((node.right, rows[~mask]))
    return out


def predict_batch(model: ForestModel, matrix) -> np.ndarray:
    """Majority-vote class indices for raw feature rows (lowest class on ties)."""
    X = np.asarray(matrix, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.n_features:
        raise ValueError(f"expected vectors of length {model.n_features}, got {X.shape[1]}")
    Xn = apply_normalizer(model.normalizer, X)
    votes = np.zeros((X.shape[0], N_CLASSES), dtype=np.int64)
    rows = np.arange(X.shape[0])
    for tree in model.trees:
        votes[rows, _tree_classes(tree, Xn)] += 1
    return np.argmax(votes, axis=1)


def predict(model: ForestModel, vector) -> SeverityLabel:
    vec = np.asarray(vector, dtype=np.float64)
    if vec.ndim != 1 or vec.size != model.n_features:
        raise ValueError(f"expected a vector of length {model.n_features}")
    return SeverityLabel(int(predict_batch(model, vec[None, :])[0]))


# --- versioned serialization -------------------------------------------------


def _encode_node(node: DecisionNode):
    if node.is_leaf:
        return {"counts": list(node.class_counts)}
    return {
        "feature": node.feature_index,
        "threshold": float(node.threshold).hex(),
        "left": _encode_node(node.left),
        "right": _encode_node(node.right),
    }


def _decode_node(obj) -> DecisionNode:
    if not isinstance(obj, dict):
        raise ModelFormatError("tree node must be an object")
    if "counts" in obj:
        return DecisionNode(class_counts=tuple(int(c) for c in obj["counts"]))
    try:
        return DecisionNode(
            feature_index=int(obj["feature"]),
            threshold=float.fromhex(obj["threshold"]),
            left=_decode_node(obj["left"]),
            right=_decode_node(obj["right"]),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise ModelFormatError(f"malformed tree node: {exc}") from None


def save_model(model: ForestModel, path) -> None:
    doc = {
        "format_version": model.format_version,
        "params": {
            "tree_count": model.params.tree_count,
            "max_depth": model.params.max_depth,
            "min_samples_leaf": model.params.min_samples_leaf,
            "features_per_split": model.params.features_per_split,
            "seed": model.params.seed,
        },
        "normalizer": {
            "mean": [float(v).hex() for v in model.normalizer.mean],
            "scale": [float(v).hex() for v in model.normalizer.scale],
        },
        "trees": [_encode_node(t) for t in model.trees],
    }
    text = json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"
    Path(path).write_text(text, encoding="utf-8", newline="\n")


def load_model(path) -> ForestModel:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not a valid model file ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise ModelFormatError(f"{path}: model document must be an object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{path}: unsupported model format {version!r}; expected {FORMAT_VERSION!r}"
        )
    try:
        params = ForestParams(**{k: int(v) for k, v in doc["params"].items()})
        normalizer = Normalizer(
            mean=np.array([float.fromhex(v) for v in doc["normalizer"]["mean"]]),
            scale=np.array([float.fromhex(v) for v in doc["normalizer"]["scale"]]),
        )
        trees = tuple(_decode_node(t) for t in doc["trees"])
    except (KeyError, ValueError, TypeError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"{path}: malformed model document: {exc}") from None
    try:
        return ForestModel(params=params, trees=trees, normalizer=normalizer,
                           format_version=version)
    except ValueError as exc:
        raise ModelFormatError(f"{path}: {exc}") from None

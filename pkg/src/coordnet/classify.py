"""Random forest on user embeddings, cross-validation and temporal forecasting."""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from numba import njit

from .embed import EmbeddingMatrix
from .evaluate import EvalReport, harmonic_f1, roc_auc

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    users: tuple[str, ...]
    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != len(self.users):
            raise ValueError("features must have one row per user")
        if self.labels is not None and len(self.labels) != len(self.users):
            raise ValueError("labels must align with users")

    @classmethod
    def from_embedding(
        cls,
        emb: EmbeddingMatrix,
        labels: Mapping[str, int] | None = None,
        users: Sequence[str] | None = None,
    ) -> "FeatureMatrix":
        """Rows for ``users`` (default: every labelled user, else every embedded one).

        Users absent from the embedding get the zero vector.
        """
        if users is None:
            users = sorted(labels) if labels is not None else list(emb.users)
        users = tuple(users)
        y = None if labels is None else np.array([int(labels[u]) for u in users], dtype=np.int64)
        return cls(users, emb.lookup(users), y)

    def subset(self, rows: np.ndarray) -> "FeatureMatrix":
        y = None if self.labels is None else self.labels[rows]
        return FeatureMatrix(tuple(self.users[i] for i in rows.tolist()), self.features[rows], y)


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    max_depth: int | None = None
    min_samples_leaf: int = 1
    max_features: int | None = None  # default: floor(sqrt(d))
    threshold: float = 0.5
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


# --- tree kernels ----------------------------------------------------------------------


@njit(cache=True)
def _gini_sum(n, pos):
    # n * gini impurity
    if n == 0:
        return 0.0
    p = pos / n
    return n * (1.0 - p * p - (1.0 - p) * (1.0 - p))


@njit(cache=True)
def _build_tree(X, y, samples, max_features, max_depth, min_leaf, seed):
    np.random.seed(seed)
    n_feat = X.shape[1]
    cap = 2 * samples.shape[0] + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    idx = samples.copy()
    # stack of (node, start, end, depth)
    stack = np.empty((cap, 4), dtype=np.int64)
    stack[0, 0], stack[0, 1], stack[0, 2], stack[0, 3] = 0, 0, idx.shape[0], 0
    top = 1
    n_nodes = 1
    perm = np.arange(n_feat)
    while top > 0:
        top -= 1
        node, start, end, depth = stack[top, 0], stack[top, 1], stack[top, 2], stack[top, 3]
        n = end - start
        pos = 0
        for i in range(start, end):
            pos += y[idx[i]]
        value[node] = pos / n
        if pos == 0 or pos == n or n < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue
        best_score = np.inf
        best_f = -1
        best_thr = 0.0
        parent = _gini_sum(n, pos)
        vals = np.empty(n)
        ys = np.empty(n, dtype=np.int64)
        visited = 0
        # partial Fisher-Yates; keep drawing past constant features like CART does
        for k in range(n_feat):
            if visited >= max_features and best_f >= 0:
                break
            j = k + np.random.randint(n_feat - k)
            perm[k], perm[j] = perm[j], perm[k]
            f = perm[k]
            for i in range(n):
                vals[i] = X[idx[start + i], f]
            order = np.argsort(vals, kind="mergesort")
            if vals[order[0]] == vals[order[n - 1]]:
                continue
            visited += 1
            for i in range(n):
                ys[i] = y[idx[start + order[i]]]
            left_pos = 0
            for i in range(n - 1):
                left_pos += ys[i]
                nl = i + 1
                if nl < min_leaf or n - nl < min_leaf:
                    continue
                a, b = vals[order[i]], vals[order[i + 1]]
                if a == b:
                    continue
                score = _gini_sum(nl, left_pos) + _gini_sum(n - nl, pos - left_pos)
                if score < best_score:
                    best_score = score
                    best_f = f
                    best_thr = a
        if best_f < 0 or best_score > parent:
            continue
        # partition idx[start:end] in place, stable for both halves
        buf = idx[start:end].copy()
        lo = start
        for i in range(n):
            if X[buf[i], best_f] <= best_thr:
                idx[lo] = buf[i]
                lo += 1
        hi = lo
        for i in range(n):
            if X[buf[i], best_f] > best_thr:
                idx[hi] = buf[i]
                hi += 1
        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack[top, 0], stack[top, 1], stack[top, 2], stack[top, 3] = n_nodes + 1, lo, end, depth + 1
        top += 1
        stack[top, 0], stack[top, 1], stack[top, 2], stack[top, 3] = n_nodes, start, lo, depth + 1
        top += 1
        n_nodes += 2
    return feature[:n_nodes], threshold[:n_nodes], left[:n_nodes], right[:n_nodes], value[:n_nodes]


@njit(cache=True)
def _predict(X, offsets, feature, threshold, left, right, value):
    n_trees = offsets.shape[0] - 1
    out = np.zeros(X.shape[0])
    for r in range(X.shape[0]):
        acc = 0.0
        for t in range(n_trees):
            base = offsets[t]
            node = 0
            while feature[base + node] >= 0:
                if X[r, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            acc += value[base + node]
        out[r] = acc / n_trees
    return out


# --- forest --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ForestModel:
    """Trees stored back to back; ``offsets[t]`` is the first node of tree ``t``."""

    n_features: int
    offsets: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    params: ForestParams

    @property
    def n_trees(self) -> int:
        return len(self.offsets) - 1

    def tree(self, t: int) -> dict[str, np.ndarray]:
        s = slice(self.offsets[t], self.offsets[t + 1])
        return {k: getattr(self, k)[s] for k in ("feature", "threshold", "left", "right", "value")}

    def save(self, path: str | Path) -> None:
        body = {
            "n_features": self.n_features,
            "params": self.params.to_dict(),
            "offsets": self.offsets.tolist(),
            "feature": self.feature.tolist(),
            "threshold": [float(x).hex() for x in self.threshold.tolist()],
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": [float(x).hex() for x in self.value.tolist()],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(body, fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "ForestModel":
        with open(path, encoding="utf-8") as fh:
            body = json.load(fh)
        ints = lambda k: np.array(body[k], dtype=np.int64)  # noqa: E731
        floats = lambda k: np.array([float.fromhex(x) for x in body[k]], dtype=np.float64)  # noqa: E731
        return cls(
            body["n_features"], ints("offsets"), ints("feature"), floats("threshold"),
            ints("left"), ints("right"), floats("value"), ForestParams(**body["params"]),
        )


def train_forest(data: FeatureMatrix, params: ForestParams | None = None, **overrides) -> ForestModel:
    """Bagged CART trees with Gini splits over random feature subsets.

    Tree ``t`` takes its bootstrap sample and its split randomness from
    ``default_rng([seed, t])``, so trees are independent of training order.
    """
    params = params or ForestParams()
    if overrides:
        params = ForestParams(**{**params.to_dict(), **overrides})
    if data.labels is None:
        raise ValueError("training data needs labels")
    y = np.asarray(data.labels, dtype=np.int64)
    if len(y) < 2 or len(np.unique(y)) < 2:
        raise ValueError("training data must contain both classes")
    X = np.ascontiguousarray(data.features, dtype=np.float64)
    n, d = X.shape
    max_features = params.max_features or max(1, int(math.sqrt(d)))
    max_depth = -1 if params.max_depth is None else params.max_depth
    parts = []
    for t in range(params.n_trees):
        rng = np.random.default_rng([params.seed, t])
        samples = rng.integers(0, n, size=n)
        tree_seed = int(rng.integers(0, 2**31 - 1))
        parts.append(
            _build_tree(X, y, samples, min(max_features, d), max_depth, params.min_samples_leaf, tree_seed)
        )
    sizes = [len(p[0]) for p in parts]
    offsets = np.r_[0, np.cumsum(sizes)].astype(np.int64)
    cat = [np.concatenate([p[k] for p in parts]) for k in range(5)]
    return ForestModel(d, offsets, *cat, params)


def predict_scores(model: ForestModel, data: FeatureMatrix | np.ndarray) -> np.ndarray:
    """Mean positive leaf fraction over trees, one score per row."""
    X = data.features if isinstance(data, FeatureMatrix) else np.asarray(data)
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValueError(
            f"feature dimension {X.shape[-1]} does not match the model's {model.n_features}"
        )
    return _predict(X, model.offsets, model.feature, model.threshold, model.left, model.right, model.value)


def predict(model: ForestModel, data: FeatureMatrix) -> dict[str, float]:
    return dict(zip(data.users, predict_scores(model, data).tolist()))


# --- cross-validation --------------------------------------------------------------------


def stratified_folds(labels: np.ndarray, k: int, seed: int = 0) -> np.ndarray:
    """Fold id per row; each class is shuffled and dealt round-robin."""
    labels = np.asarray(labels)
    n = len(labels)
    if k < 2 or k > n:
        raise ValueError(f"k must lie in [2, {n}], got {k}")
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) < 2 or counts.min() < 2:
        raise ValueError(
            "stratified cross-validation needs at least 2 users of each class; "
            f"class counts are {dict(zip(classes.tolist(), counts.tolist()))}"
        )
    if counts.min() < k:
        warnings.warn(
            f"smallest class has {counts.min()} users, fewer than k={k}; "
            "some folds will lack it",
            stacklevel=2,
        )
    rng = np.random.default_rng([seed, 0xF01D])
    folds = np.empty(n, dtype=np.int64)
    offset = 0
    for c in classes:
        rows = np.nonzero(labels == c)[0]
        rows = rows[rng.permutation(len(rows))]
        folds[rows] = (np.arange(len(rows)) + offset) % k
        offset += len(rows)
    return folds


def _fold_metrics(scores: np.ndarray, y: np.ndarray, threshold: float) -> dict:
    flagged = scores >= threshold
    tp = int((flagged & (y == 1)).sum())
    precision = tp / flagged.sum() if flagged.any() else 0.0
    recall = tp / (y == 1).sum() if (y == 1).any() else float("nan")
    auc = roc_auc(scores, y) if 0 < y.sum() < len(y) else float("nan")
    return {
        "precision": float(precision),
        "recall": float(recall),
        "f1": harmonic_f1(precision, recall),
        "auc": auc,
        "n_test": int(len(y)),
        "n_flagged": int(flagged.sum()),
    }


def cross_validate(
    data: FeatureMatrix, k: int = 10, params: ForestParams | None = None, seed: int | None = None
) -> EvalReport:
    """Stratified k-fold CV. P and R are fold means; AUC uses pooled out-of-fold scores."""
    params = params or ForestParams()
    if seed is not None:
        params = ForestParams(**{**params.to_dict(), "seed": seed})
    y = np.asarray(data.labels, dtype=np.int64)
    folds = stratified_folds(y, k, params.seed)
    pooled = np.empty(len(y))
    per_fold = []
    for f in range(k):
        test = np.nonzero(folds == f)[0]
        train = np.nonzero(folds != f)[0]
        model = train_forest(data.subset(train), params)
        pooled[test] = predict_scores(model, data.features[test])
        per_fold.append({"fold": f, **_fold_metrics(pooled[test], y[test], params.threshold)})
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        precision = float(np.nanmean([m["precision"] for m in per_fold]))
        recall = float(np.nanmean([m["recall"] for m in per_fold]))
    return EvalReport(
        precision,
        recall,
        roc_auc(pooled, y),
        tuple(per_fold),
        {"task": "cross_validate", "k": k, "n_users": len(y), "n_positive": int(y.sum()), **params.to_dict()},
    )


def holdout_report(
    train: FeatureMatrix, test: FeatureMatrix, params: ForestParams | None = None, **config
) -> EvalReport:
    params = params or ForestParams()
    model = train_forest(train, params)
    y = np.asarray(test.labels, dtype=np.int64)
    m = _fold_metrics(predict_scores(model, test), y, params.threshold)
    return EvalReport(m["precision"], m["recall"], m["auc"], (m,), {**config, **params.to_dict()})

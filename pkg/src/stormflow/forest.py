"""Random forest of CART trees, written out in full.

Trees are grown on bootstrap resamples with Gini impurity and a random
feature subset per node.  Thresholds sit halfway between consecutive
distinct values and samples with ``x <= threshold`` go left.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .descriptors import LAYOUT_VERSION, N_FEATURES, VortexDescriptor, descriptor_matrix
from .errors import DataError, LayoutMismatchError
from .evaluation import Metrics, confusion_metrics, mean_of

MODEL_FORMAT = "stormflow-forest"
MODEL_VERSION = 1


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 12
    min_leaf: int = 5
    features_per_split: int = 3
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if not 1 <= self.features_per_split <= N_FEATURES:
            raise ValueError(f"features_per_split must be in [1, {N_FEATURES}]")
        if self.n_jobs < 1:
            raise ValueError("n_jobs must be >= 1")


@dataclass(frozen=True)
class Tree:
    """Flat binary tree; ``feature[k] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # (n_nodes, 2): negatives, positives

    def leaf_of(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            n = node[idx]
            go_left = X[idx, self.feature[n]] <= self.threshold[n]
            node[idx] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return node

    def vote(self, X: np.ndarray) -> np.ndarray:
        c = self.counts[self.leaf_of(X)]
        return c[:, 1] >= c[:, 0]

    def to_dict(self) -> dict:
        return dict(feature=self.feature.tolist(), threshold=self.threshold.tolist(),
                    left=self.left.tolist(), right=self.right.tolist(),
                    counts=self.counts.tolist())

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(np.array(d["feature"], dtype=np.int64),
                   np.array(d["threshold"], dtype=np.float64),
                   np.array(d["left"], dtype=np.int64),
                   np.array(d["right"], dtype=np.int64),
                   np.array(d["counts"], dtype=np.int64).reshape(-1, 2))


def _gini_children(y_sorted: np.ndarray, n: int):
    """Weighted child Gini for every cut position 1..n-1 of a sorted column."""
    pos_left = np.cumsum(y_sorted)[:-1]
    n_left = np.arange(1, n)
    n_right = n - n_left
    pos_right = y_sorted.sum() - pos_left
    p_l = pos_left / n_left
    p_r = pos_right / n_right
    return (n_left * 2 * p_l * (1 - p_l) + n_right * 2 * p_r * (1 - p_r)) / n


def _best_split(X, y, feats, min_leaf):
    n = len(y)
    p = y.mean()
    parent = 2 * p * (1 - p)
    best = None  # (gain, feature, threshold)
    for f in feats:
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        impurity = _gini_children(ys, n)
        cut = np.arange(1, n)
        ok = (xs[1:] > xs[:-1]) & (cut >= min_leaf) & (n - cut >= min_leaf)
        if not ok.any():
            continue
        gains = np.where(ok, parent - impurity, -np.inf)
        k = int(np.argmax(gains))
        if gains[k] <= 1e-12 or (best is not None and gains[k] <= best[0]):
            continue
        lo, hi = xs[k], xs[k + 1]
        thr = lo + (hi - lo) / 2
        if not lo <= thr < hi:
            thr = lo
        best = (gains[k], int(f), float(thr))
    return best


def grow_tree(X: np.ndarray, y: np.ndarray, features: Sequence[int], cfg: ForestConfig,
              rng: np.random.Generator) -> Tree:
    features = np.asarray(features, dtype=np.int64)
    m = min(cfg.features_per_split, len(features))
    feat, thr, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feat.append(-1)
        thr.append(0.0)
        left.append(-1)
        right.append(-1)
        n_pos = int(y[idx].sum())
        counts.append((len(idx) - n_pos, n_pos))
        return len(feat) - 1

    stack = [(new_node(np.arange(len(y))), np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        n_neg, n_pos = counts[node]
        if depth >= cfg.max_depth or n_neg == 0 or n_pos == 0 or len(idx) < 2 * cfg.min_leaf:
            continue
        drawn = rng.choice(features, size=m, replace=False)
        split = _best_split(X[idx], y[idx], drawn, cfg.min_leaf)
        if split is None:
            continue
        _, f, t = split
        go_left = X[idx, f] <= t
        feat[node], thr[node] = f, t
        li, ri = idx[go_left], idx[~go_left]
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(np.array(feat, np.int64), np.array(thr, np.float64), np.array(left, np.int64),
                np.array(right, np.int64), np.array(counts, np.int64).reshape(-1, 2))


@dataclass(frozen=True)
class Forest:
    trees: tuple
    config: ForestConfig
    features: tuple[int, ...] = tuple(range(N_FEATURES))
    layout: str = LAYOUT_VERSION
    oob_score: float | None = None

    def _matrix(self, X) -> np.ndarray:
        if isinstance(X, VortexDescriptor):
            X = [X]
        if len(X) and isinstance(X[0], VortexDescriptor):
            bad = {d.layout for d in X} - {self.layout}
            if bad:
                raise LayoutMismatchError(f"descriptor layout {sorted(bad)} != model {self.layout}")
            return descriptor_matrix(X)
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != N_FEATURES:
            raise LayoutMismatchError(f"expected {N_FEATURES} features, got {X.shape[1]}")
        return X

    def scores(self, X) -> np.ndarray:
        """Fraction of trees voting positive for each row."""
        X = self._matrix(X)
        votes = np.zeros(len(X))
        for t in self.trees:
            votes += t.vote(X)
        return votes / len(self.trees)

    def predict_many(self, X) -> tuple[np.ndarray, np.ndarray]:
        s = self.scores(X)
        return s >= 0.5, s

    def predict(self, x) -> tuple[bool, float]:
        """(label, score); a score of exactly 0.5 counts as positive."""
        labels, s = self.predict_many(x)
        return bool(labels[0]), float(s[0])

    # ---------------------------------------------------------- files

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg.pop("n_jobs")
        return dict(format=MODEL_FORMAT, version=MODEL_VERSION, layout=self.layout,
                    config=cfg, features=list(self.features), oob_score=self.oob_score,
                    trees=[t.to_dict() for t in self.trees])

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_dict(cls, d: dict, expected_layout: str = LAYOUT_VERSION) -> "Forest":
        if d.get("format") != MODEL_FORMAT:
            raise DataError("not a stormflow forest model")
        if d.get("version") != MODEL_VERSION:
            raise DataError(f"unsupported model version {d.get('version')}")
        if d.get("layout") != expected_layout:
            raise LayoutMismatchError(
                f"model feature layout {d.get('layout')!r} != expected {expected_layout!r}")
        return cls(tuple(Tree.from_dict(t) for t in d["trees"]), ForestConfig(**d["config"]),
                   tuple(d["features"]), d["layout"], d.get("oob_score"))

    @classmethod
    def load(cls, path) -> "Forest":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"{path}: cannot read model ({e})") from e
        return cls.from_dict(d)


def _as_training_arrays(samples, labels):
    X = descriptor_matrix(samples) if len(samples) and isinstance(samples[0], VortexDescriptor) \
        else np.asarray(samples, dtype=np.float64).reshape(len(samples), -1)
    y = np.asarray(labels, dtype=bool)
    if len(X) != len(y):
        raise ValueError(f"{len(X)} samples but {len(y)} labels")
    if len(y) < 2:
        raise ValueError("need at least two samples")
    if y.all() or not y.any():
        raise ValueError("training labels must contain both classes")
    if X.shape[1] != N_FEATURES:
        raise LayoutMismatchError(f"expected {N_FEATURES} features, got {X.shape[1]}")
    if not np.isfinite(X).all():
        raise ValueError("features must be finite")
    return X, y


def train(samples, labels, cfg: ForestConfig | None = None,
          features: Sequence[int] | None = None) -> Forest:
    """Fit a forest.  ``features`` restricts splits to a subset of the eight
    descriptor columns (for ablations); predictions still take all eight."""
    cfg = cfg or ForestConfig()
    X, y = _as_training_arrays(samples, labels)
    features = tuple(int(f) for f in (features if features is not None else range(N_FEATURES)))
    if not features or any(not 0 <= f < N_FEATURES for f in features):
        raise ValueError(f"feature indices must lie in [0, {N_FEATURES})")
    yi = y.astype(np.int64)
    n = len(y)

    def fit(i):
        # counter-based per-tree stream: tree i is the same however trees are scheduled
        rng = np.random.default_rng([cfg.seed, i])
        boot = rng.integers(0, n, size=n)
        tree = grow_tree(X[boot], yi[boot], features, cfg, rng)
        oob = np.ones(n, dtype=bool)
        oob[boot] = False
        return tree, oob

    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            fitted = list(pool.map(fit, range(cfg.n_trees)))
    else:
        fitted = [fit(i) for i in range(cfg.n_trees)]

    votes = np.zeros(n)
    voters = np.zeros(n)
    for tree, oob in fitted:
        if oob.any():
            votes[oob] += tree.vote(X[oob])
            voters[oob] += 1
    seen = voters > 0
    oob_score = float(np.mean((votes[seen] / voters[seen] >= 0.5) == y[seen])) if seen.any() else None
    return Forest(tuple(t for t, _ in fitted), cfg, features, LAYOUT_VERSION, oob_score)


def predict(f: Forest, x) -> tuple[bool, float]:
    return f.predict(x)


# ------------------------------------------------------------- validation

def stratified_folds(y: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Fold index per sample; each class is shuffled then dealt round-robin."""
    y = np.asarray(y, dtype=bool)
    if k < 2:
        raise ValueError("need at least two folds")
    for cls in (False, True):
        if np.sum(y == cls) < k:
            raise ValueError(f"class {cls} has fewer than {k} samples; stratified folds infeasible")
    rng = np.random.default_rng(seed)
    fold = np.empty(len(y), dtype=np.int64)
    for cls in (False, True):
        idx = np.nonzero(y == cls)[0]
        fold[rng.permutation(idx)] = np.arange(len(idx)) % k
    return fold


@dataclass(frozen=True)
class CVResult:
    folds: tuple[Metrics, ...]
    pooled: Metrics = field(init=False)

    def __post_init__(self):
        total = self.folds[0]
        for m in self.folds[1:]:
            total = total + m
        object.__setattr__(self, "pooled", total)

    @property
    def mean_overall(self) -> float | None:
        return mean_of(m.overall for m in self.folds)

    @property
    def mean_sensitivity(self) -> float | None:
        return mean_of(m.sensitivity for m in self.folds)

    @property
    def mean_specificity(self) -> float | None:
        return mean_of(m.specificity for m in self.folds)


def cross_validate(samples, labels, k: int = 10, cfg: ForestConfig | None = None,
                   features: Sequence[int] | None = None) -> CVResult:
    """Stratified k-fold metrics; folds depend only on the labels and seed."""
    cfg = cfg or ForestConfig()
    X = descriptor_matrix(samples) if len(samples) and isinstance(samples[0], VortexDescriptor) \
        else np.asarray(samples, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if len(X) != len(y):
        raise ValueError(f"{len(X)} samples but {len(y)} labels")
    fold = stratified_folds(y, k, cfg.seed)
    out = []
    for j in range(k):
        test = fold == j
        model = train(X[~test], y[~test], cfg, features)
        pred, _ = model.predict_many(X[test])
        out.append(confusion_metrics(pred, y[test]))
    return CVResult(tuple(out))

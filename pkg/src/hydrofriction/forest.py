"""Bootstrap-aggregated regression trees (variance-reduction CART).

Trees are stored as flat node arrays: ``feature[i] < 0`` marks a leaf whose
prediction is ``value[i]``; internal nodes send ``x[feature] <= threshold``
left. Split search is exhaustive over midpoints of consecutive distinct
values; equal-gain candidates resolve to the lowest feature index, then the
lowest threshold.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import List, Optional

import numpy as np

from .errors import InvalidArgument

TIE_RTOL = 1e-10


@dataclass
class ForestConfig:
    n_estimators: int = 64
    max_depth: Optional[int] = 10
    min_samples_leaf: int = 1
    feature_subsample: float = 1.0
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise InvalidArgument("n_estimators must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise InvalidArgument("max_depth must be >= 0 or None")
        if self.min_samples_leaf < 1:
            raise InvalidArgument("min_samples_leaf must be >= 1")
        if not 0 < self.feature_subsample <= 1:
            raise InvalidArgument("feature_subsample must be in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


class RegressionTree:
    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.value = np.asarray(value, dtype=float)
        # plain lists are much faster than numpy scalars for single-row walks
        self._lists = (self.feature.tolist(), self.threshold.tolist(), self.left.tolist(),
                       self.right.tolist(), self.value.tolist())

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        depths = [0] * self.n_nodes
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depths[self.left[i]] = depths[self.right[i]] = depths[i] + 1
        return max(depths)

    def predict_one(self, x) -> float:
        feat, thr, left, right, value = self._lists
        node = 0
        while feat[node] >= 0:
            node = left[node] if x[feat[node]] <= thr[node] else right[node]
        return value[node]

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r = rows[active]
            nd = node[r]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active[r] = self.feature[node[r]] >= 0
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(np.asarray(X, dtype=float))]

    def to_dict(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionTree":
        n = len(d["feature"])
        if not all(len(d[k]) == n for k in ("threshold", "left", "right", "value")):
            raise InvalidArgument("tree node arrays have inconsistent lengths")
        return cls(d["feature"], d["threshold"], d["left"], d["right"], d["value"])


def _best_split(Xn, yn, features, min_leaf):
    """Return (feature, threshold) of the lowest-SSE split, or None."""
    n = len(yn)
    cols = Xn[:, features]
    order = np.argsort(cols, axis=0, kind="stable")
    xs = np.take_along_axis(cols, order, axis=0)
    yc = yn - yn.mean()
    ys = yc[order]
    csum = np.cumsum(ys, axis=0)
    csq = np.cumsum(ys * ys, axis=0)
    nl = np.arange(1, n, dtype=float)[:, None]
    nr = n - nl
    sl, ql = csum[:-1], csq[:-1]
    sr, qr = csum[-1] - sl, csq[-1] - ql
    sse = (ql - sl * sl / nl) + (qr - sr * sr / nr)
    valid = xs[1:] > xs[:-1]
    if min_leaf > 1:
        valid &= (nl >= min_leaf) & (nr >= min_leaf)
    if not valid.any():
        return None
    sse = np.where(valid, sse, np.inf).T.reshape(-1)
    # splits inducing the same partition on different features differ only by
    # rounding; treat near-equal SSE as a tie so the ordering rule decides
    tol = TIE_RTOL * float(csq[-1, 0])
    flat = int(np.flatnonzero(sse <= sse.min() + tol)[0])
    j, pos = divmod(flat, n - 1)
    lo, hi = xs[pos, j], xs[pos + 1, j]
    thr = 0.5 * (lo + hi)
    if not lo <= thr < hi:
        thr = lo
    return int(features[j]), float(thr)


def fit_tree(X, y, config: ForestConfig, tree_seed=None) -> RegressionTree:
    """Greedy depth-first CART on ``(X, y)``; nodes stored in pre-order."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
        raise InvalidArgument("need a non-empty 2-D feature matrix aligned with targets")
    rng = np.random.default_rng(tree_seed)
    n_feat = X.shape[1]
    k = max(1, int(round(config.feature_subsample * n_feat)))
    all_features = np.arange(n_feat)
    max_depth = np.inf if config.max_depth is None else config.max_depth
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(np.mean(y[idx])))
        return len(feature) - 1

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        if depth >= max_depth or len(idx) < 2 * config.min_samples_leaf or np.ptp(yn) == 0:
            continue
        feats = all_features if k == n_feat else np.sort(rng.choice(n_feat, k, replace=False))
        split = _best_split(X[idx], yn, feats, config.min_samples_leaf)
        if split is None:
            continue
        j, thr = split
        go_left = X[idx, j] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = j, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # right pushed first so the left subtree is expanded first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return RegressionTree(feature, threshold, left, right, value)


class RandomForest:
    def __init__(self, trees: List[RegressionTree], n_features: int):
        self.trees = trees
        self.n_features = n_features

    def predict_one(self, x) -> float:
        """Mean of the tree outputs, summed in tree order."""
        if len(x) != self.n_features:
            raise InvalidArgument(f"expected {self.n_features} features, got {len(x)}")
        xs = x.tolist() if isinstance(x, np.ndarray) else list(x)
        total = 0.0
        for tree in self.trees:
            total += tree.predict_one(xs)
        return total / len(self.trees)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return np.array(self.predict_one(X))
        if X.shape[1] != self.n_features:
            raise InvalidArgument(f"expected {self.n_features} features, got {X.shape[1]}")
        total = np.zeros(len(X))
        for tree in self.trees:
            total += tree.predict(X)
        return total / len(self.trees)

    def to_dict(self) -> dict:
        return {"n_features": self.n_features, "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d: dict) -> "RandomForest":
        trees = [RegressionTree.from_dict(t) for t in d["trees"]]
        if not trees:
            raise InvalidArgument("forest has no trees")
        return cls(trees, int(d["n_features"]))


def bootstrap_indices(n: int, seed: int, tree_index: int) -> np.ndarray:
    return np.random.default_rng([seed, tree_index]).integers(0, n, n)


def fit_forest(X, y, config: ForestConfig, seed: Optional[int] = None,
               n_jobs: int = 1) -> RandomForest:
    """Fit ``n_estimators`` trees; tree ``i`` draws its bootstrap sample (row
    indices, so row order matters) and feature subsets from the generator
    seeded with ``(seed, i)``. Trees may be built on ``n_jobs`` threads; the
    result does not depend on it."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    seed = config.seed if seed is None else seed
    n = len(y)

    def build(i):
        rng_seed = [seed, i]
        if config.bootstrap:
            rng = np.random.default_rng(rng_seed)
            idx = rng.integers(0, n, n)
            return fit_tree(X[idx], y[idx], config, tree_seed=rng)
        return fit_tree(X, y, config, tree_seed=rng_seed)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            trees = list(pool.map(build, range(config.n_estimators)))
    else:
        trees = [build(i) for i in range(config.n_estimators)]
    return RandomForest(trees, X.shape[1])

"""Bagged CART forests (Gini classification, variance-reduction regression)."""

from __future__ import annotations

import math

import numpy as np

from ..errors import TrainingError
from .base import Model, register
from .common import ClassWeights

_TREE_FIELDS = ("feature", "threshold", "left", "right", "value")


def _best_split(X, idx, feats, a, b, min_leaf, criterion):
    """Best (score, feature, threshold) over ``feats`` for node rows ``idx``.

    For "gini", a and b are per-row positive / negative class weights and the
    score to maximize is sum_child (p^2 + q^2) / (p + q). For "mse", a is the
    row weight and b the weighted target, maximizing sum_child S^2 / W.
    Ties go to the lowest feature index, then the lowest threshold.
    """
    Xs = X[np.ix_(idx, feats)]
    order = np.argsort(Xs, axis=0, kind="stable")
    xs = np.take_along_axis(Xs, order, axis=0)
    ca = np.cumsum(a[idx][order], axis=0)[:-1]
    cb = np.cumsum(b[idx][order], axis=0)[:-1]
    ta, tb = a[idx].sum(), b[idx].sum()
    n = len(idx)
    pos = np.arange(1, n)[:, None]
    valid = (xs[1:] > xs[:-1]) & (pos >= min_leaf) & (n - pos >= min_leaf)
    if not valid.any():
        return None
    ra, rb = ta - ca, tb - cb
    with np.errstate(divide="ignore", invalid="ignore"):
        if criterion == "gini":
            lw, rw = ca + cb, ra + rb
            score = (ca * ca + cb * cb) / lw + (ra * ra + rb * rb) / rw
        else:
            score = cb * cb / ca + rb * rb / ra
    score = np.where(valid & np.isfinite(score), score, -np.inf)
    flat = score.T.ravel()  # feature-major, thresholds ascending
    k = int(np.argmax(flat))
    if not np.isfinite(flat[k]):
        return None
    f_pos, row = divmod(k, n - 1)
    thr = 0.5 * (xs[row, f_pos] + xs[row + 1, f_pos])
    if not thr < xs[row + 1, f_pos]:
        thr = xs[row, f_pos]
    return flat[k], int(feats[f_pos]), float(thr)


def build_tree(X, a, b, rows, rng, max_features, criterion, max_depth=None,
               min_leaf=1) -> dict:
    """Grow one tree on ``rows`` (may contain bootstrap duplicates)."""
    d = X.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        for lst, v in ((feature, -1), (threshold, 0.0), (left, -1), (right, -1), (value, 0.0)):
            lst.append(v)
        return len(feature) - 1

    root = new_node()
    stack = [(root, rows, 0)]
    while stack:
        node, idx, depth = stack.pop()
        sa, sb = a[idx].sum(), b[idx].sum()
        if criterion == "gini":
            value[node] = sa / (sa + sb) if sa + sb > 0 else 0.0
            pure = sa == 0 or sb == 0
        else:
            value[node] = sb / sa
            yv = b[idx] / a[idx]
            pure = bool(np.all(yv == yv[0]))
        if pure or len(idx) < 2 * min_leaf or (max_depth is not None and depth >= max_depth):
            continue
        feats = np.sort(rng.choice(d, size=max_features, replace=False))
        best = _best_split(X, idx, feats, a, b, min_leaf, criterion)
        if best is None and max_features < d:
            rest = np.setdiff1d(np.arange(d), feats)
            best = _best_split(X, idx, rest, a, b, min_leaf, criterion)
        if best is None:
            continue
        _, f, thr = best
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        lnode, rnode = new_node(), new_node()
        left[node], right[node] = lnode, rnode
        # push right first so the left subtree is numbered first
        stack.append((rnode, ri, depth + 1))
        stack.append((lnode, li, depth + 1))
    return {
        "feature": np.array(feature, dtype=np.int64),
        "threshold": np.array(threshold, dtype=float),
        "left": np.array(left, dtype=np.int64),
        "right": np.array(right, dtype=np.int64),
        "value": np.array(value, dtype=float),
    }


def tree_apply(tree: dict, X: np.ndarray) -> np.ndarray:
    """Leaf value reached by each row of X."""
    feature, threshold = tree["feature"], tree["threshold"]
    left, right = tree["left"], tree["right"]
    node = np.zeros(len(X), dtype=np.int64)
    rows = np.arange(len(X))
    active = feature[node] >= 0
    while active.any():
        r = rows[active]
        nd = node[r]
        go_left = X[r, feature[nd]] <= threshold[nd]
        node[r] = np.where(go_left, left[nd], right[nd])
        active[r] = feature[node[r]] >= 0
    return tree["value"][node]


def _n_features(spec, d: int) -> int:
    if spec == "sqrt":
        return max(1, int(math.floor(math.sqrt(d))))
    if spec == "third":
        return max(1, d // 3)
    if spec is None or spec == "all":
        return d
    return max(1, min(d, int(spec)))


class _Forest(Model):
    criterion = "gini"

    @property
    def trees(self) -> list[dict]:
        return self.params["trees"]

    @classmethod
    def decode_params(cls, raw: dict) -> dict:
        trees = []
        for t in raw["trees"]:
            trees.append({
                k: np.asarray(t[k], dtype=np.int64 if k in ("feature", "left", "right") else float)
                for k in _TREE_FIELDS
            })
        return {"trees": trees, "n_features": np.asarray(raw["n_features"], dtype=np.int64)}

    def truncated(self, n_trees: int):
        """The forest made of the first ``n_trees`` trees.

        Trees are seeded by index, so this equals a forest trained with
        ``n_trees`` from the start.
        """
        hp = dict(self.hyperparams, n_trees=n_trees)
        return type(self)(hp, {"trees": self.trees[:n_trees], "n_features": self.params["n_features"]})

    @classmethod
    def _grow(cls, X, a, b, n_trees, max_features, max_depth, min_leaf, bootstrap, seed):
        X = np.asarray(X, dtype=float)
        n, d = X.shape
        m = _n_features(max_features, d)
        trees = []
        for child in np.random.SeedSequence(seed).spawn(n_trees):
            rng = np.random.default_rng(child)
            rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
            trees.append(build_tree(X, a, b, rows, rng, m, cls.criterion, max_depth, min_leaf))
        return trees, d


@register
class RandomForest(_Forest):
    """Classification forest; the score is the fraction of trees voting positive."""

    kind = "RandomForest"

    def votes(self, X) -> np.ndarray:
        X = self._check_input(X, 2, int(self.params["n_features"]))
        return np.stack([tree_apply(t, X) > 0.5 for t in self.trees]).astype(float)

    def predict_score(self, X) -> np.ndarray:
        return self.votes(X).mean(axis=0)

    @classmethod
    def fit(cls, X, y, weights=None, n_trees: int = 100, max_features="sqrt",
            max_depth=None, min_leaf: int = 1, bootstrap: bool = True,
            seed: int = 0) -> "RandomForest":
        y = np.asarray(y, dtype=float)
        is_pos = y >= 0.5
        if is_pos.all() or not is_pos.any():
            raise TrainingError("degenerate class: labels contain a single class")
        if isinstance(weights, ClassWeights):
            sw = weights.per_sample(y)
        elif weights is None:
            sw = np.ones(len(y))
        else:
            sw = np.asarray(weights, dtype=float)
        a = np.where(is_pos, sw, 0.0)
        b = np.where(is_pos, 0.0, sw)
        trees, d = cls._grow(X, a, b, n_trees, max_features, max_depth, min_leaf, bootstrap, seed)
        hp = {"n_trees": n_trees, "max_features": max_features, "max_depth": max_depth,
              "min_leaf": min_leaf, "bootstrap": bootstrap}
        return cls(hp, {"trees": trees, "n_features": np.asarray(d)})


@register
class RandomForestRegressor(_Forest):
    kind = "RandomForestReg"
    task = "regression"
    criterion = "mse"

    def predict(self, X) -> np.ndarray:
        X = self._check_input(X, 2, int(self.params["n_features"]))
        return np.mean([tree_apply(t, X) for t in self.trees], axis=0)

    @classmethod
    def fit(cls, X, y, n_trees: int = 100, max_features="third", max_depth=None,
            min_leaf: int = 5, bootstrap: bool = True, seed: int = 0) -> "RandomForestRegressor":
        y = np.asarray(y, dtype=float)
        a = np.ones(len(y))
        trees, d = cls._grow(X, a, a * y, n_trees, max_features, max_depth, min_leaf,
                             bootstrap, seed)
        hp = {"n_trees": n_trees, "max_features": max_features, "max_depth": max_depth,
              "min_leaf": min_leaf, "bootstrap": bootstrap}
        return cls(hp, {"trees": trees, "n_features": np.asarray(d)})

"""Regression random forests for the conditional mean of one response."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np

logger = logging.getLogger(__name__)

LEAF = -1


@dataclass(frozen=True)
class RegressionTree:
    """Array-encoded CART tree; ``feature[i] == LEAF`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    bootstrap_indices: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row of ``X``."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] != LEAF
        while active.any():
            rows = np.flatnonzero(active)
            cur = node[rows]
            go_left = X[rows, self.feature[cur]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            active[rows] = self.feature[node[rows]] != LEAF
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[i] + 1
                depth[self.right[i]] = depth[i] + 1
        return int(depth.max())


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    mtry: int | None = None  # None -> max(1, p // 3)
    min_node_size: int = 5
    seed: int = 0


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[RegressionTree, ...]
    mtry: int
    min_node_size: int
    seed: int
    n_features: int
    oob_predictions: np.ndarray  # NaN where a row was never out of bag
    in_sample_predictions: np.ndarray

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @cached_property
    def _flat(self):
        sizes = np.array([t.n_nodes for t in self.trees])
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])

        def shift(a, off):
            return np.where(a == LEAF, LEAF, a + off)

        return {
            "roots": offsets,
            "feature": np.concatenate([t.feature for t in self.trees]),
            "threshold": np.concatenate([t.threshold for t in self.trees]),
            "left": np.concatenate([shift(t.left, o) for t, o in zip(self.trees, offsets)]),
            "right": np.concatenate([shift(t.right, o) for t, o in zip(self.trees, offsets)]),
            "value": np.concatenate([t.value for t in self.trees]),
        }

    def predict(self, Z) -> np.ndarray:
        """Average of per-tree leaf means, all trees traversed in lockstep."""
        Z = _as_matrix(Z, self.n_features)
        fl = self._flat
        m = Z.shape[0]
        node = np.repeat(fl["roots"][:, None], m, axis=1)
        cols = np.broadcast_to(np.arange(m), node.shape)
        while True:
            feat = fl["feature"][node]
            internal = feat != LEAF
            if not internal.any():
                break
            x = Z[cols, np.where(internal, feat, 0)]
            nxt = np.where(x <= fl["threshold"][node], fl["left"][node], fl["right"][node])
            node = np.where(internal, nxt, node)
        return fl["value"][node].mean(axis=0)


def _as_matrix(Z, p: int) -> np.ndarray:
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[None, :]
    if Z.ndim != 2 or Z.shape[1] != p:
        raise ValueError(f"expected covariates with {p} column(s), got shape {Z.shape}")
    return Z


def _best_split(x: np.ndarray, y: np.ndarray):
    """Best SSE-reducing threshold on one column, or None.

    Returns ``(gain, threshold, left_mask)``; ``gain`` is the reduction in
    within-node sum of squared errors.
    """
    order = np.argsort(x, kind="stable")
    xs = x[order]
    valid = xs[:-1] < xs[1:]
    if not valid.any():
        return None
    ys = y[order]
    n = ys.shape[0]
    csum = np.cumsum(ys)[:-1]
    total = csum[-1] + ys[-1]
    n_left = np.arange(1, n, dtype=float)
    score = csum**2 / n_left + (total - csum) ** 2 / (n - n_left)
    score[~valid] = -np.inf
    i = int(np.argmax(score))
    gain = score[i] - total**2 / n
    if not gain > 1e-12 * max(1.0, float(np.sum(ys**2))):
        return None
    threshold = 0.5 * (xs[i] + xs[i + 1])
    # The midpoint of two adjacent floats can round onto the right value.
    if not threshold < xs[i + 1]:
        threshold = xs[i]
    return gain, threshold, x <= threshold


def _grow_tree(X: np.ndarray, y: np.ndarray, mtry: int, min_node_size: int,
               rng: np.random.Generator) -> RegressionTree:
    n, p = X.shape
    boot = rng.integers(0, n, size=n)
    Xb, yb = X[boot], y[boot]

    feature, threshold, left, right, value, count = [], [], [], [], [], []

    def new_node(rows):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(yb[rows].mean()))
        count.append(rows.shape[0])
        return len(feature) - 1

    stack = [(new_node(np.arange(n)), np.arange(n))]
    while stack:
        node, rows = stack.pop()
        ys = yb[rows]
        if rows.shape[0] < min_node_size or ys.max() == ys.min():
            continue
        best = None
        cols = rng.permutation(p)
        # Try mtry random columns; fall through to the rest only if none splits.
        for start, stop in ((0, mtry), (mtry, p)):
            for c in cols[start:stop]:
                found = _best_split(Xb[rows, c], ys)
                if found is not None and (best is None or found[0] > best[0]):
                    best = (found[0], int(c), found[1], found[2])
            if best is not None:
                break
        if best is None:
            continue
        _, c, thr, mask = best
        left_rows, right_rows = rows[mask], rows[~mask]
        feature[node] = c
        threshold[node] = float(thr)
        left[node] = new_node(left_rows)
        right[node] = new_node(right_rows)
        stack.append((right[node], right_rows))
        stack.append((left[node], left_rows))

    return RegressionTree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=float),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=float),
        count=np.asarray(count, dtype=np.int64),
        bootstrap_indices=boot,
    )


def fit_forest(X, y, cfg: ForestConfig | None = None, n_jobs: int = 1) -> ForestModel:
    """Bootstrap-aggregated CART regression trees with out-of-bag predictions.

    Each tree gets its own seed spawned from ``cfg.seed``, so the fitted
    forest does not depend on ``n_jobs``.
    """
    cfg = cfg or ForestConfig()
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y have different numbers of rows")
    if y.shape[0] < 2:
        raise ValueError("need at least two observations to fit a forest")
    if cfg.n_trees < 1 or cfg.min_node_size < 1:
        raise ValueError("n_trees and min_node_size must be positive")
    n, p = X.shape
    mtry = cfg.mtry if cfg.mtry is not None else max(1, p // 3)
    mtry = int(min(max(mtry, 1), p))

    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees)

    def grow(ss):
        return _grow_tree(X, y, mtry, cfg.min_node_size, np.random.default_rng(ss))

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = tuple(pool.map(grow, seeds))
    else:
        trees = tuple(grow(ss) for ss in seeds)

    oob_sum = np.zeros(n)
    oob_cnt = np.zeros(n)
    in_sum = np.zeros(n)
    for tree in trees:
        pred = tree.predict(X)
        in_sum += pred
        out = np.ones(n, dtype=bool)
        out[tree.bootstrap_indices] = False
        oob_sum[out] += pred[out]
        oob_cnt[out] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        oob = np.where(oob_cnt > 0, oob_sum / oob_cnt, np.nan)

    return ForestModel(
        trees=trees,
        mtry=mtry,
        min_node_size=cfg.min_node_size,
        seed=cfg.seed,
        n_features=p,
        oob_predictions=oob,
        in_sample_predictions=in_sum / len(trees),
    )


def predict_mean(f: ForestModel, z) -> np.ndarray | float:
    """Forest estimate of the conditional mean; scalar for a single row."""
    z = np.asarray(z, dtype=float)
    out = f.predict(z)
    return float(out[0]) if z.ndim == 1 else out


def oob_residuals(f: ForestModel, y) -> np.ndarray:
    """``y`` minus out-of-bag predictions.

    Rows that landed in every bootstrap sample fall back to the in-sample
    forest prediction.
    """
    y = np.asarray(y, dtype=float).ravel()
    if y.shape != f.oob_predictions.shape:
        raise ValueError("y does not match the forest's training rows")
    missing = np.isnan(f.oob_predictions)
    if missing.any():
        logger.warning("%d row(s) never out of bag; using in-sample predictions", int(missing.sum()))
    pred = np.where(missing, f.in_sample_predictions, f.oob_predictions)
    return y - pred

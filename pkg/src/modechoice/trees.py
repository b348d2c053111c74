"""CART, bagging, random forest and multinomial gradient boosting, from scratch.

Trees are stored as flat node arrays. Splits send ``x <= threshold`` left.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from joblib import Parallel, delayed
from numba import njit

from .dataset import DataError, WideMatrix



def gini_impurity(counts) -> float:
    counts = np.asarray(counts, dtype=float)
    if np.any(counts < 0):
        raise ValueError("counts must be nonnegative")
    n = counts.sum()
    if n <= 0:
        raise ValueError("gini impurity of an empty node")
    return float(1.0 - np.sum((counts / n) ** 2))


@dataclass
class Tree:
    """Flat binary tree.

    ``value`` holds class counts (classification) or the leaf score
    (regression, one column). ``gain`` is the weighted impurity decrease of
    each internal node's split, 0 at leaves.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    n_node: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.is_leaf))

    @property
    def n_splits(self) -> int:
        return int(np.sum(~self.is_leaf))

    def depth(self) -> int:
        d = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                d[self.left[i]] = d[i] + 1
                d[self.right[i]] = d[i] + 1
        return int(d.max())

    def apply(self, Z) -> np.ndarray:
        """Leaf index for every row."""
        return _apply(self.feature, self.threshold, self.left, self.right,
                      np.ascontiguousarray(Z, dtype=float))

    @property
    def leaf_probs(self) -> np.ndarray:
        tot = self.value.sum(axis=1, keepdims=True)
        return self.value / np.where(tot > 0, tot, 1.0)

    def importance(self, n_features: int) -> np.ndarray:
        out = np.zeros(n_features)
        internal = ~self.is_leaf
        np.add.at(out, self.feature[internal], self.gain[internal])
        return out

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in
                ("feature", "threshold", "left", "right", "value", "gain", "n_node")}

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(np.array(d["feature"], dtype=np.int64), np.array(d["threshold"], dtype=float),
                   np.array(d["left"], dtype=np.int64), np.array(d["right"], dtype=np.int64),
                   np.array(d["value"], dtype=float), np.array(d["gain"], dtype=float),
                   np.array(d["n_node"], dtype=np.int64))


# ---------------------------------------------------------------------------
# numba kernels


@njit(cache=True)
def _splitmix(state):
    state[0] += np.uint64(0x9E3779B97F4A7C15)
    z = state[0]
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _presort(Z):
    n, P = Z.shape
    S = np.empty((P, n), dtype=np.int64)
    for f in range(P):
        S[f] = np.argsort(Z[:, f], kind="mergesort")
    return S


@njit(cache=True)
def _partition(S, s, e, goes_left, buf):
    """Stable partition of every feature's sorted segment [s, e)."""
    P = S.shape[0]
    nl = 0
    for f in range(P):
        a = 0
        for i in range(s, e):
            if goes_left[S[f, i]]:
                buf[a] = S[f, i]
                a += 1
        nl = a
        for i in range(s, e):
            if not goes_left[S[f, i]]:
                buf[a] = S[f, i]
                a += 1
        for i in range(e - s):
            S[f, s + i] = buf[i]
    return nl


@njit(cache=True)
def _midpoint(x0, x1):
    t = 0.5 * (x0 + x1)
    if t >= x1:
        t = x0
    return t


@njit(cache=True)
def _grow_cls(Z, y, K, min_split, mtry, seed, max_depth):
    n, P = Z.shape
    S = _presort(Z)
    cap = 2 * n + 1
    feat = -np.ones(cap, dtype=np.int64)
    thr = np.zeros(cap)
    left = -np.ones(cap, dtype=np.int64)
    right = -np.ones(cap, dtype=np.int64)
    val = np.zeros((cap, K))
    gain = np.zeros(cap)
    nn = np.zeros(cap, dtype=np.int64)
    seg_s = np.zeros(cap, dtype=np.int64)
    seg_e = np.zeros(cap, dtype=np.int64)
    depth = np.zeros(cap, dtype=np.int64)
    for i in range(n):
        val[0, y[i]] += 1.0
    nn[0] = n
    seg_e[0] = n
    n_nodes = 1
    stack = np.empty(cap, dtype=np.int64)
    stack[0] = 0
    sp = 1
    goes_left = np.zeros(n, dtype=np.bool_)
    buf = np.empty(n, dtype=np.int64)
    feats = np.arange(P)
    state = np.array([seed], dtype=np.uint64)
    lc = np.zeros(K)
    rc = np.zeros(K)
    while sp > 0:
        sp -= 1
        node = stack[sp]
        s = seg_s[node]
        e = seg_e[node]
        m = e - s
        if m < min_split:
            continue
        nonzero = 0
        for c in range(K):
            if val[node, c] > 0:
                nonzero += 1
        if nonzero <= 1:
            continue
        if max_depth >= 0 and depth[node] >= max_depth:
            continue
        if mtry < P:
            for j in range(P):
                feats[j] = j
            for j in range(mtry):
                r = j + np.int64(_splitmix(state) % np.uint64(P - j))
                tmp = feats[j]
                feats[j] = feats[r]
                feats[r] = tmp
            cand = np.sort(feats[:mtry])
        else:
            cand = np.arange(P)
        tot2 = 0.0
        for c in range(K):
            tot2 += val[node, c] * val[node, c]
        parent = m - tot2 / m
        best_g = 0.0
        best_f = -1
        best_t = 0.0
        for f in cand:
            sl = 0.0
            sr = tot2
            for c in range(K):
                lc[c] = 0.0
                rc[c] = val[node, c]
            for i in range(m - 1):
                row = S[f, s + i]
                c = y[row]
                sl += 2.0 * lc[c] + 1.0
                lc[c] += 1.0
                sr += -2.0 * rc[c] + 1.0
                rc[c] -= 1.0
                x0 = Z[row, f]
                x1 = Z[S[f, s + i + 1], f]
                if x0 < x1:
                    nl = i + 1.0
                    nr = m - nl
                    g = parent - (nl - sl / nl + nr - sr / nr)
                    if g > best_g + 1e-12 * m:
                        best_g = g
                        best_f = f
                        best_t = _midpoint(x0, x1)
        if best_f < 0:
            continue
        for i in range(s, e):
            row = S[0, i]
            goes_left[row] = Z[row, best_f] <= best_t
        nl = _partition(S, s, e, goes_left, buf)
        ln = n_nodes
        rn = n_nodes + 1
        n_nodes += 2
        feat[node] = best_f
        thr[node] = best_t
        gain[node] = best_g
        left[node] = ln
        right[node] = rn
        seg_s[ln] = s
        seg_e[ln] = s + nl
        seg_s[rn] = s + nl
        seg_e[rn] = e
        for i in range(s, s + nl):
            val[ln, y[S[0, i]]] += 1.0
        for i in range(s + nl, e):
            val[rn, y[S[0, i]]] += 1.0
        nn[ln] = nl
        nn[rn] = m - nl
        depth[ln] = depth[node] + 1
        depth[rn] = depth[node] + 1
        stack[sp] = rn
        stack[sp + 1] = ln
        sp += 2
    return (feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes],
            val[:n_nodes], gain[:n_nodes], nn[:n_nodes])


@njit(cache=True)
def _reg_best(Z, S, r, s, e, min_node):
    P = S.shape[0]
    m = e - s
    best_g = 0.0
    best_f = -1
    best_t = 0.0
    if m < 2 * min_node:
        return best_g, best_f, best_t
    tot = 0.0
    for i in range(s, e):
        tot += r[S[0, i]]
    base = tot * tot / m
    for f in range(P):
        cl = 0.0
        for i in range(m - 1):
            row = S[f, s + i]
            cl += r[row]
            nl = i + 1
            nr = m - nl
            if nl < min_node:
                continue
            if nr < min_node:
                break
            x0 = Z[row, f]
            x1 = Z[S[f, s + i + 1], f]
            if x0 < x1:
                cr = tot - cl
                g = cl * cl / nl + cr * cr / nr - base
                if g > best_g + 1e-12 * m:
                    best_g = g
                    best_f = f
                    best_t = _midpoint(x0, x1)
    return best_g, best_f, best_t


@njit(cache=True)
def _grow_reg(Z, S0, r, n_splits, min_node, kfac):
    """Best-first regression tree; leaves get the multinomial Newton step."""
    n, P = Z.shape
    S = S0.copy()
    cap = 2 * n_splits + 1
    feat = -np.ones(cap, dtype=np.int64)
    thr = np.zeros(cap)
    left = -np.ones(cap, dtype=np.int64)
    right = -np.ones(cap, dtype=np.int64)
    val = np.zeros((cap, 1))
    gain = np.zeros(cap)
    nn = np.zeros(cap, dtype=np.int64)
    seg_s = np.zeros(cap, dtype=np.int64)
    seg_e = np.zeros(cap, dtype=np.int64)
    bg = np.zeros(cap)
    bf = -np.ones(cap, dtype=np.int64)
    bt = np.zeros(cap)
    frontier = np.zeros(cap, dtype=np.bool_)
    goes_left = np.zeros(n, dtype=np.bool_)
    buf = np.empty(n, dtype=np.int64)
    seg_e[0] = n
    nn[0] = n
    frontier[0] = True
    bg[0], bf[0], bt[0] = _reg_best(Z, S, r, 0, n, min_node)
    n_nodes = 1
    for _ in range(n_splits):
        node = -1
        for j in range(n_nodes):
            if frontier[j] and bf[j] >= 0 and (node < 0 or bg[j] > bg[node]):
                node = j
        if node < 0:
            break
        s = seg_s[node]
        e = seg_e[node]
        f = bf[node]
        t = bt[node]
        for i in range(s, e):
            row = S[0, i]
            goes_left[row] = Z[row, f] <= t
        nl = _partition(S, s, e, goes_left, buf)
        ln = n_nodes
        rn = n_nodes + 1
        n_nodes += 2
        feat[node] = f
        thr[node] = t
        gain[node] = bg[node]
        left[node] = ln
        right[node] = rn
        frontier[node] = False
        seg_s[ln] = s
        seg_e[ln] = s + nl
        seg_s[rn] = s + nl
        seg_e[rn] = e
        nn[ln] = nl
        nn[rn] = e - s - nl
        frontier[ln] = True
        frontier[rn] = True
        bg[ln], bf[ln], bt[ln] = _reg_best(Z, S, r, s, s + nl, min_node)
        bg[rn], bf[rn], bt[rn] = _reg_best(Z, S, r, s + nl, e, min_node)
    for j in range(n_nodes):
        if frontier[j]:
            num = 0.0
            den = 0.0
            for i in range(seg_s[j], seg_e[j]):
                v = r[S[0, i]]
                num += v
                den += abs(v) * (1.0 - abs(v))
            val[j, 0] = 0.0 if den < 1e-12 else kfac * num / den
    return (feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes],
            val[:n_nodes], gain[:n_nodes], nn[:n_nodes])


@njit(cache=True)
def _apply(feature, threshold, left, right, Z):
    out = np.empty(Z.shape[0], dtype=np.int64)
    for i in range(Z.shape[0]):
        node = 0
        while feature[node] >= 0:
            if Z[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


def _grow_classifier(Z, y, n_classes, min_split=2, mtry=None, seed=0, max_depth=None):
    P = Z.shape[1]
    arrays = _grow_cls(np.ascontiguousarray(Z, dtype=float), np.ascontiguousarray(y, dtype=np.int64),
                       int(n_classes), int(min_split), P if mtry is None else int(mtry),
                       np.uint64(seed), -1 if max_depth is None else int(max_depth))
    return Tree(*arrays)


def _node_risk(tree: Tree) -> np.ndarray:
    """n_t * gini(t) for every node."""
    c = tree.value
    n = c.sum(axis=1)
    return n - np.einsum("ij,ij->i", c, c) / np.where(n > 0, n, 1.0)


def prune_to_leaves(tree: Tree, max_leaves: int) -> Tree:
    """Weakest-link (cost-complexity) pruning down to exactly ``max_leaves``.

    Only collapses that cannot overshoot the target are considered, so the
    result has exactly ``max_leaves`` leaves whenever the input had at least
    that many.
    """
    if max_leaves < 1:
        raise ValueError("max_leaves must be >= 1")
    n = tree.n_nodes
    risk = _node_risk(tree)
    feature = tree.feature.copy()
    parent = -np.ones(n, dtype=np.int64)
    internal = np.flatnonzero(feature >= 0)
    parent[tree.left[internal]] = internal
    parent[tree.right[internal]] = internal
    leaves = np.ones(n, dtype=np.int64)
    sub_risk = risk.copy()
    # children always have larger ids than their parent
    for i in internal[::-1]:
        leaves[i] = leaves[tree.left[i]] + leaves[tree.right[i]]
        sub_risk[i] = sub_risk[tree.left[i]] + sub_risk[tree.right[i]]
    dead = np.zeros(n, dtype=bool)
    while leaves[0] > max_leaves:
        excess = leaves[0] - max_leaves
        cand = (feature >= 0) & ~dead & (leaves - 1 <= excess)
        ids = np.flatnonzero(cand)
        g = (risk[ids] - sub_risk[ids]) / (leaves[ids] - 1)
        t = int(ids[np.argmin(g)])
        drop_leaves, drop_risk = leaves[t] - 1, sub_risk[t] - risk[t]
        stack = [tree.left[t], tree.right[t]]
        while stack:
            i = stack.pop()
            dead[i] = True
            if feature[i] >= 0:
                stack += [tree.left[i], tree.right[i]]
        feature[t] = -1
        leaves[t], sub_risk[t] = 1, risk[t]
        a = parent[t]
        while a >= 0:
            leaves[a] -= drop_leaves
            sub_risk[a] -= drop_risk
            a = parent[a]
    keep = np.flatnonzero(~dead)
    remap = -np.ones(n, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    feat = feature[keep]
    is_int = feat >= 0
    left = np.where(is_int, remap[tree.left[keep]], -1)
    right = np.where(is_int, remap[tree.right[keep]], -1)
    return Tree(feat, np.where(is_int, tree.threshold[keep], 0.0), left, right,
                tree.value[keep], np.where(is_int, tree.gain[keep], 0.0), tree.n_node[keep])


def _rows(rows, col_names) -> np.ndarray:
    if isinstance(rows, WideMatrix):
        return rows.select(col_names).Z
    Z = np.asarray(rows, dtype=float)
    if Z.ndim != 2 or Z.shape[1] != len(col_names):
        raise DataError(f"expected {len(col_names)} columns {list(col_names)}, got array of shape {Z.shape}")
    return Z


def _train_arrays(w):
    if isinstance(w, WideMatrix):
        return np.asarray(w.Z, dtype=float), np.asarray(w.y, dtype=np.int64), w.col_names
    Z, y = w
    Z = np.asarray(Z, dtype=float)
    return Z, np.asarray(y, dtype=np.int64), tuple(f"x{j}" for j in range(Z.shape[1]))


@dataclass
class CartModel:
    tree: Tree
    col_names: tuple
    n_classes: int
    col_min: np.ndarray = None
    col_max: np.ndarray = None

    def predict_proba(self, rows) -> np.ndarray:
        return self.tree.leaf_probs[self.tree.apply(_rows(rows, self.col_names))]


def fit_cart(w, max_leaves: Optional[int] = 6, min_split: int = 10,
             n_classes: Optional[int] = None) -> CartModel:
    """Greedy Gini tree grown until nodes are pure or smaller than
    ``min_split``, then pruned to ``max_leaves`` (None keeps the full tree)."""
    Z, y, names = _train_arrays(w)
    if len(y) < 2:
        raise ValueError("CART needs at least two observations")
    k = n_classes or int(y.max()) + 1
    tree = _grow_classifier(Z, y, k, min_split=min_split)
    if max_leaves is not None:
        tree = prune_to_leaves(tree, max_leaves)
    return CartModel(tree, names, k, Z.min(axis=0), Z.max(axis=0))


# ---------------------------------------------------------------------------
# bagging / random forest


def _tree_rng(seed, t):
    return np.random.default_rng([int(seed), int(t)])


def _bootstrap(seed, t, n):
    return _tree_rng(seed, t).integers(0, n, size=n)


def _fit_forest_tree(Z, y, k, seed, t, mtry, min_split, bootstrap):
    rng = _tree_rng(seed, t)
    n = len(y)
    sample = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
    node_seed = int(rng.integers(0, 2 ** 63))
    return _grow_classifier(Z[sample], y[sample], k, min_split=min_split, mtry=mtry, seed=node_seed)


@dataclass
class Ensemble:
    trees: list
    kind: str
    col_names: tuple
    n_classes: int
    seed: int
    mtry: Optional[int] = None
    n_train: int = 0
    bootstrap: bool = True
    col_min: np.ndarray = None
    col_max: np.ndarray = None

    @property
    def oob_indices(self) -> list:
        """Out-of-bag training rows per tree (regenerated from the tree seeds)."""
        out = []
        for t in range(len(self.trees)):
            if not self.bootstrap:
                out.append(np.zeros(0, dtype=np.int64))
                continue
            inbag = np.zeros(self.n_train, dtype=bool)
            inbag[_bootstrap(self.seed, t, self.n_train)] = True
            out.append(np.flatnonzero(~inbag))
        return out

    def votes(self, Z) -> np.ndarray:
        Z = _rows(Z, self.col_names)
        v = np.zeros((Z.shape[0], self.n_classes))
        rows = np.arange(Z.shape[0])
        for tree in self.trees:
            label = np.argmax(tree.value, axis=1)  # lowest class wins ties
            v[rows, label[tree.apply(Z)]] += 1
        return v

    def predict_proba(self, rows) -> np.ndarray:
        return self.votes(rows) / len(self.trees)


def _fit_forest(w, n_trees, seed, mtry, kind, min_split=2, n_jobs=1, bootstrap=True, n_classes=None):
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    Z, y, names = _train_arrays(w)
    k = n_classes or int(y.max()) + 1
    jobs = (delayed(_fit_forest_tree)(Z, y, k, seed, t, mtry, min_split, bootstrap)
            for t in range(n_trees))
    if n_jobs == 1:
        trees = [f(*a, **kw) for f, a, kw in jobs]
    else:
        trees = Parallel(n_jobs=n_jobs)(jobs)
    return Ensemble(trees, kind, names, k, seed, mtry, len(y), bootstrap, Z.min(axis=0), Z.max(axis=0))


def fit_bagging(w, n_trees: int = 400, seed: int = 0, n_jobs: int = 1,
                bootstrap: bool = True, n_classes=None) -> Ensemble:
    """Unpruned trees on bootstrap resamples using all features."""
    return _fit_forest(w, n_trees, seed, None, "bagging", n_jobs=n_jobs,
                       bootstrap=bootstrap, n_classes=n_classes)


def fit_rf(w, n_trees: int = 500, mtry: int = 12, seed: int = 0, n_jobs: int = 1,
           n_classes=None) -> Ensemble:
    """Bagging with a fresh uniform subset of ``mtry`` columns at every split."""
    P = (w.cols if isinstance(w, WideMatrix) else np.asarray(w[0]).shape[1])
    if not 1 <= mtry <= P:
        raise ValueError(f"mtry={mtry} must be in [1, n_features={P}]")
    return _fit_forest(w, n_trees, seed, mtry, "random-forest", n_jobs=n_jobs, n_classes=n_classes)


# ---------------------------------------------------------------------------
# gradient boosting


@dataclass
class BoostModel:
    stages: list          # per iteration, one regression tree per class
    init_scores: np.ndarray
    shrinkage: float
    n_iters: int
    interaction_depth: int
    min_node: int
    col_names: tuple
    n_classes: int
    col_min: np.ndarray = None
    col_max: np.ndarray = None
    train_deviance: list = field(default_factory=list)

    def scores(self, rows, n_iters=None) -> np.ndarray:
        Z = _rows(rows, self.col_names)
        F = np.tile(self.init_scores, (Z.shape[0], 1))
        for stage in self.stages[: n_iters if n_iters is not None else len(self.stages)]:
            for k, tree in enumerate(stage):
                F[:, k] += self.shrinkage * tree.value[tree.apply(Z), 0]
        return F

    def predict_proba(self, rows) -> np.ndarray:
        return _softmax_scores(self.scores(rows))


def _softmax_scores(F):
    E = np.exp(F - F.max(axis=1, keepdims=True))
    return E / E.sum(axis=1, keepdims=True)


def multinomial_deviance(y, probs) -> float:
    return float(-2 * np.mean(np.log(np.clip(probs[np.arange(len(y)), y], 1e-300, None))))


def fit_boost(w, n_iters: int = 400, shrinkage: float = 0.14, depth: int = 10,
              min_node: int = 10, n_classes=None) -> BoostModel:
    """Multinomial-deviance gradient boosting, one regression tree per class
    per iteration, Newton leaf updates (K-1)/K * sum r / sum |r|(1-|r|)."""
    Z, y, names = _train_arrays(w)
    Z = np.ascontiguousarray(Z)
    n = len(y)
    if n <= min_node:
        raise ValueError(f"need more than min_node={min_node} observations")
    K = n_classes or int(y.max()) + 1
    Y = np.eye(K)[y]
    prior = np.clip(Y.mean(axis=0), 1e-12, None)
    init = np.log(prior)
    F = np.tile(init, (n, 1))
    S = _presort(Z)
    kfac = (K - 1) / K
    stages, dev = [], []
    for _ in range(n_iters):
        P = _softmax_scores(F)
        dev.append(multinomial_deviance(y, P))
        stage = []
        for k in range(K):
            r = np.ascontiguousarray(Y[:, k] - P[:, k])
            stage.append(Tree(*_grow_reg(Z, S, r, int(depth), int(min_node), kfac)))
        for k, tree in enumerate(stage):
            F[:, k] += shrinkage * tree.value[tree.apply(Z), 0]
        stages.append(stage)
    dev.append(multinomial_deviance(y, _softmax_scores(F)))
    return BoostModel(stages, init, shrinkage, n_iters, depth, min_node, names, K,
                      Z.min(axis=0), Z.max(axis=0), dev)


# ---------------------------------------------------------------------------


def predict_proba(model, rows) -> np.ndarray:
    return model.predict_proba(rows)


def gini_tally(model) -> np.ndarray:
    """Accumulated impurity decrease per feature over every split of every tree."""
    if not isinstance(model, (CartModel, Ensemble, BoostModel)):
        raise TypeError(f"not a tree model: {type(model).__name__}")
    P = len(model.col_names)
    if isinstance(model, CartModel):
        return model.tree.importance(P)
    if isinstance(model, Ensemble):
        return np.sum([t.importance(P) for t in model.trees], axis=0)
    if isinstance(model, BoostModel):
        return np.sum([t.importance(P) for stage in model.stages for t in stage], axis=0) \
            if model.stages else np.zeros(P)

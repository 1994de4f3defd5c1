"""Multi-output regression trees and forests trained on soft (simplex) targets.

Split search is delegated to scikit-learn's CART builders (squared-error
criterion, which is the per-output variance). The fitted structure is copied
into :class:`Tree`, a flat pre-order array layout that this package owns:
prediction, feature importance and serialization all work on it directly.

Binary forest container (all fields little-endian)::

    header   magic  4s   b"AGFO"
             version u16
             kind    u8   0 = bagged, 1 = extra
             pad     u8
             C       u32  classes (output width)
             width   u32  input feature width d'
             n_trees u32
             subsample u32
             seed    u64
    per tree n_nodes u32, n_leaves u32
             n_nodes node records, pre-order:
                 feature i32 (-1 on leaves), threshold f64, left i32, right i32,
                 impurity_decrease f64, n_samples u32, leaf i32 (-1 on internal)
             n_leaves * C f64 leaf values, in leaf-id order
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Optional

import numpy as np
from sklearn.tree import DecisionTreeRegressor, ExtraTreeRegressor

from ._rng import derive_seed, substream
from .data import kfold_indices
from .errors import BadK, EmptyInput, FormatError, WidthMismatch

BAGGED = "bagged"
EXTRA = "extra"
KINDS = (BAGGED, EXTRA)

MAGIC = b"AGFO"
VERSION = 1

NODE_DTYPE = np.dtype([
    ("feature", "<i4"),
    ("threshold", "<f8"),
    ("left", "<i4"),
    ("right", "<i4"),
    ("impurity_decrease", "<f8"),
    ("n_samples", "<u4"),
    ("leaf", "<i4"),
])
_HEADER = struct.Struct("<4sHBBIIIIQ")
_TREE_HEADER = struct.Struct("<II")


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Tree:
    """A fitted tree in pre-order array form.

    Node 0 is the root. For an internal node ``feature >= 0`` and the sample
    goes left when ``x[feature] <= threshold``. For a leaf ``feature == -1`` and
    ``value[leaf[node]]`` is its class-probability vector.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    impurity_decrease: np.ndarray
    n_samples: np.ndarray
    leaf: np.ndarray
    value: np.ndarray
    n_features: int

    def __post_init__(self):
        for name, dt in (("feature", np.int32), ("threshold", np.float64), ("left", np.int32),
                         ("right", np.int32), ("impurity_decrease", np.float64),
                         ("n_samples", np.int64), ("leaf", np.int32), ("value", np.float64)):
            object.__setattr__(self, name, _frozen(getattr(self, name), dt))

    @property
    def n_nodes(self):
        return self.feature.shape[0]

    @property
    def n_classes(self):
        return self.value.shape[1]

    @property
    def n_splits(self):
        return int(np.count_nonzero(self.feature >= 0))

    def is_leaf(self, node):
        return self.feature[node] < 0

    def to_nested(self, node=0):
        """Recursive dict form, for JSON dumps and hand inspection."""
        if self.is_leaf(node):
            return {"value": self.value[self.leaf[node]].tolist(), "n_samples": int(self.n_samples[node])}
        return {
            "feature": int(self.feature[node]),
            "threshold": float(self.threshold[node]),
            "impurity_decrease": float(self.impurity_decrease[node]),
            "n_samples": int(self.n_samples[node]),
            "left": self.to_nested(int(self.left[node])),
            "right": self.to_nested(int(self.right[node])),
        }

    @classmethod
    def from_nested(cls, root, n_features):
        """Build a tree from the dict form produced by :meth:`to_nested`."""
        rec, values = [], []

        def walk(node):
            i = len(rec)
            if "value" in node:
                rec.append([-1, 0.0, -1, -1, 0.0, node.get("n_samples", 1), len(values)])
                values.append(node["value"])
                return i
            rec.append([node["feature"], node["threshold"], -1, -1,
                        node.get("impurity_decrease", 0.0), node.get("n_samples", 1), -1])
            rec[i][2] = walk(node["left"])
            rec[i][3] = walk(node["right"])
            return i

        walk(root)
        cols = list(zip(*rec))
        return cls(np.array(cols[0]), np.array(cols[1]), np.array(cols[2]), np.array(cols[3]),
                   np.array(cols[4]), np.array(cols[5]), np.array(cols[6]),
                   np.array(values, dtype=np.float64), n_features)

    def records(self):
        out = np.empty(self.n_nodes, dtype=NODE_DTYPE)
        for name in NODE_DTYPE.names:
            out[name] = getattr(self, name)
        return out


@dataclass(frozen=True)
class TreeParams:
    max_depth: Optional[int] = None
    min_samples_leaf: int = 2
    feature_subsample: Optional[int] = None  # None -> ceil(sqrt(width))
    kind: str = BAGGED

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")

    def subsample_for(self, width):
        if self.feature_subsample is None:
            return max(1, math.ceil(math.sqrt(width)))
        return max(1, min(int(self.feature_subsample), width))


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 100
    kind: str = BAGGED
    max_depth: Optional[int] = None
    min_samples_leaf: int = 2
    feature_subsample: Optional[int] = None

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("a forest needs at least one tree")
        self.tree_params()

    def tree_params(self):
        return TreeParams(self.max_depth, self.min_samples_leaf, self.feature_subsample, self.kind)

    def scaled(self, factor):
        """Same forest with ``factor`` times as many trees (at least one)."""
        return replace(self, n_trees=max(1, int(round(self.n_trees * factor))))


def _check_xy(X, Y):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyInput("need a non-empty 2-D feature matrix")
    if Y.ndim != 2 or Y.shape[0] != X.shape[0]:
        raise WidthMismatch(f"targets {Y.shape} do not match features {X.shape}")
    return X, Y


def _from_sklearn(est, n_features, n_classes):
    t = est.tree_
    left = t.children_left.astype(np.int32)
    right = t.children_right.astype(np.int32)
    internal = left >= 0
    feature = np.where(internal, t.feature, -1).astype(np.int32)
    threshold = np.where(internal, t.threshold, 0.0)
    counts = t.n_node_samples.astype(np.int64)
    # sklearn averages the per-output variance; the sum over outputs is wanted
    imp = t.impurity * n_classes
    dec = np.zeros(t.node_count)
    li, ri = left[internal], right[internal]
    n = counts[internal].astype(np.float64)
    dec[internal] = imp[internal] - (counts[li] * imp[li] + counts[ri] * imp[ri]) / n
    np.maximum(dec, 0.0, out=dec)
    leaf = np.full(t.node_count, -1, dtype=np.int32)
    leaf_nodes = np.flatnonzero(~internal)
    leaf[leaf_nodes] = np.arange(leaf_nodes.size, dtype=np.int32)
    value = t.value[leaf_nodes, :, 0].reshape(leaf_nodes.size, n_classes)
    value = np.maximum(value, 0.0)
    # sklearn's depth-first builder emits nodes in pre-order; guard against that changing
    if not np.array_equal(li, np.flatnonzero(internal) + 1):
        raise RuntimeError("unexpected node ordering from the tree builder")
    return Tree(feature, threshold, left, right, dec, counts, leaf, value, n_features)


def fit_tree(X, Y, params=TreeParams(), seed=0):
    """Fit one multi-output CART tree on soft targets.

    ``bagged`` trees search every midpoint threshold over a random subset of
    ``feature_subsample`` columns; ``extra`` trees draw a single uniform
    threshold per candidate column. Leaves hold the mean target row.
    """
    X, Y = _check_xy(X, Y)
    cls = DecisionTreeRegressor if params.kind == BAGGED else ExtraTreeRegressor
    est = cls(
        max_depth=params.max_depth,
        min_samples_leaf=params.min_samples_leaf,
        max_features=params.subsample_for(X.shape[1]),
        random_state=int(seed) & 0xFFFFFFFF,
    )
    est.fit(X.astype(np.float32), Y)
    return _from_sklearn(est, X.shape[1], Y.shape[1])


def _route(tree_arrays, X32, roots):
    feature, threshold, left, right = tree_arrays
    T, n = roots.shape[0], X32.shape[0]
    idx = np.repeat(roots[:, None], n, axis=1)
    rows = np.broadcast_to(np.arange(n), (T, n))
    while True:
        f = feature[idx]
        internal = f >= 0
        if not internal.any():
            return idx
        go_left = X32[rows, np.maximum(f, 0)] <= threshold[idx]
        idx = np.where(internal, np.where(go_left, left[idx], right[idx]), idx)


def _as_width(X, width):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != width:
        raise WidthMismatch(f"expected {width} features, got {X.shape[1]}")
    # thresholds were learned on float32 copies; compare on the same grid
    return X.astype(np.float32)


def predict_tree(tree, x):
    """Probability vector(s) for one row or a matrix of rows."""
    single = np.ndim(x) == 1
    X32 = _as_width(x, tree.n_features)
    idx = _route((tree.feature, tree.threshold, tree.left, tree.right), X32, np.zeros(1, dtype=np.int64))[0]
    out = tree.value[tree.leaf[idx]]
    return out[0] if single else out


@dataclass(frozen=True, eq=False)
class Forest:
    trees: tuple
    kind: str
    n_features: int
    feature_subsample: int
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        if not self.trees:
            raise EmptyInput("a forest needs at least one tree")
        if any(t.n_features != self.n_features for t in self.trees):
            raise WidthMismatch("all trees must share the forest's input width")

    @property
    def n_classes(self):
        return self.trees[0].n_classes

    @cached_property
    def _packed(self):
        sizes = np.array([t.n_nodes for t in self.trees])
        leaves = np.array([t.value.shape[0] for t in self.trees])
        offs = np.concatenate([[0], np.cumsum(sizes)[:-1]])
        loffs = np.concatenate([[0], np.cumsum(leaves)[:-1]])
        feature = np.concatenate([t.feature for t in self.trees])
        threshold = np.concatenate([t.threshold for t in self.trees])
        left = np.concatenate([np.where(t.left >= 0, t.left + o, -1) for t, o in zip(self.trees, offs)])
        right = np.concatenate([np.where(t.right >= 0, t.right + o, -1) for t, o in zip(self.trees, offs)])
        leaf = np.concatenate([np.where(t.leaf >= 0, t.leaf + lo, -1) for t, lo in zip(self.trees, loffs)])
        value = np.concatenate([t.value for t in self.trees])
        return (feature, threshold, left, right), leaf, value, offs


def fit_forest(X, Y, params=ForestParams(), seed=0):
    """Fit ``params.n_trees`` trees; ``bagged`` trees see a bootstrap resample,
    ``extra`` trees the full sample. Tree ``t`` is seeded from ``(seed, t)``."""
    X, Y = _check_xy(X, Y)
    n = X.shape[0]
    tp = params.tree_params()
    trees = []
    for t in range(params.n_trees):
        rng = substream(seed, "tree", t)
        if params.kind == BAGGED:
            rows = rng.integers(0, n, n)
            Xt, Yt = X[rows], Y[rows]
        else:
            Xt, Yt = X, Y
        trees.append(fit_tree(Xt, Yt, tp, seed=derive_seed(seed, "tree-split", t)))
    return Forest(tuple(trees), params.kind, X.shape[1], tp.subsample_for(X.shape[1]), int(seed))


def predict_forest(forest, X, chunk=4096):
    """Row-wise mean of the trees' leaf vectors, an n x C matrix."""
    X32 = _as_width(X, forest.n_features)
    arrays, leaf, value, offs = forest._packed
    out = np.empty((X32.shape[0], forest.n_classes))
    for s in range(0, X32.shape[0], chunk):
        idx = _route(arrays, X32[s:s + chunk], offs)
        out[s:s + chunk] = value[leaf[idx]].mean(axis=0)
    return out


def feature_importance(forests):
    """Pooled, normalized importance over every node of every listed forest.

    Each split contributes ``impurity_decrease * n_samples`` to its feature.
    With no split anywhere the result is uniform.
    """
    forests = list(forests)
    if not forests:
        raise EmptyInput("need at least one forest")
    width = forests[0].n_features
    if any(f.n_features != width for f in forests):
        raise WidthMismatch("forests disagree on input width")
    total = np.zeros(width)
    for forest in forests:
        for tree in forest.trees:
            split = tree.feature >= 0
            np.add.at(total, tree.feature[split], tree.impurity_decrease[split] * tree.n_samples[split])
    s = total.sum()
    if s <= 0.0:
        return np.full(width, 1.0 / width)
    return total / s


@dataclass
class OOFResult:
    forests: list            # full-data forests, one per ForestParams
    oof: list                # per forest, n x C out-of-fold predictions
    folds: list              # held-out index arrays
    fold_forests: Optional[list] = None  # per fold, list of forests

    def oof_matrix(self):
        return np.hstack(self.oof)


def oof_predict(X, Y, params, k=3, labels=None, seed=0, transform=None, keep_fold_forests=False):
    """Out-of-fold predictions for a group of forests.

    For each of ``k`` stratified folds, every forest in ``params`` is fitted on
    the complement and predicts the held-out rows, so each row's prediction
    comes from models that never saw it. A full-data group is fitted as well.
    ``transform(X, Y, rows, tag)`` may rewrite each training part before
    fitting (the cascade uses it for augmentation); ``tag`` is the fold number
    or ``"full"``.
    """
    X, Y = _check_xy(X, Y)
    params = [params] if isinstance(params, ForestParams) else list(params)
    n = X.shape[0]
    if not 2 <= k <= n:
        raise BadK(f"need 2 <= k <= n, got k={k}, n={n}")
    labels = np.argmax(Y, axis=1) if labels is None else labels
    folds = kfold_indices(n, k, labels, seed=derive_seed(seed, "folds"))
    oof = [np.zeros((n, Y.shape[1])) for _ in params]
    kept = [] if keep_fold_forests else None
    for f, held in enumerate(folds):
        rows = np.setdiff1d(np.arange(n), held, assume_unique=True)
        Xt, Yt = X[rows], Y[rows]
        if transform is not None:
            Xt, Yt = transform(Xt, Yt, rows, f)
        group = [fit_forest(Xt, Yt, p, seed=derive_seed(seed, "fold", f, j)) for j, p in enumerate(params)]
        for j, forest in enumerate(group):
            oof[j][held] = predict_forest(forest, X[held])
        if kept is not None:
            kept.append(group)
    Xf, Yf = X, Y
    if transform is not None:
        Xf, Yf = transform(X, Y, np.arange(n), "full")
    full = [fit_forest(Xf, Yf, p, seed=derive_seed(seed, "full", j)) for j, p in enumerate(params)]
    return OOFResult(full, oof, folds, kept)


# ---------------------------------------------------------------- serialization

def write_forest(forest, fh):
    kind = KINDS.index(forest.kind)
    fh.write(_HEADER.pack(MAGIC, VERSION, kind, 0, forest.n_classes, forest.n_features,
                          len(forest.trees), forest.feature_subsample, forest.seed & 0xFFFFFFFFFFFFFFFF))
    for tree in forest.trees:
        fh.write(_TREE_HEADER.pack(tree.n_nodes, tree.value.shape[0]))
        fh.write(tree.records().tobytes())
        fh.write(np.ascontiguousarray(tree.value, dtype="<f8").tobytes())


def _read_exact(fh, size):
    buf = fh.read(size)
    if len(buf) != size:
        raise FormatError("truncated forest container")
    return buf


def read_forest(fh):
    magic, version, kind, _, C, width, n_trees, subsample, seed = _HEADER.unpack(_read_exact(fh, _HEADER.size))
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported forest container version {version}")
    trees = []
    for _ in range(n_trees):
        n_nodes, n_leaves = _TREE_HEADER.unpack(_read_exact(fh, _TREE_HEADER.size))
        rec = np.frombuffer(_read_exact(fh, n_nodes * NODE_DTYPE.itemsize), dtype=NODE_DTYPE)
        value = np.frombuffer(_read_exact(fh, n_leaves * C * 8), dtype="<f8").reshape(n_leaves, C)
        trees.append(Tree(rec["feature"], rec["threshold"], rec["left"], rec["right"],
                          rec["impurity_decrease"], rec["n_samples"], rec["leaf"], value, width))
    return Forest(tuple(trees), KINDS[kind], width, subsample, seed)


def forest_to_bytes(forest):
    buf = io.BytesIO()
    write_forest(forest, buf)
    return buf.getvalue()


def forest_from_bytes(blob):
    return read_forest(io.BytesIO(blob))


def forest_to_json(forest):
    return {
        "kind": forest.kind,
        "n_features": forest.n_features,
        "n_classes": forest.n_classes,
        "feature_subsample": forest.feature_subsample,
        "seed": forest.seed,
        "trees": [t.to_nested() for t in forest.trees],
    }


def dump_forest_json(forest, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(forest_to_json(forest), fh)

"""Cut-mix for tabular rows with importance-weighted soft labels.

A selected row keeps a random subset of its own cells and takes the rest from
a partner row. Its label becomes ``c * y_i + (1 - c) * y_j`` where ``c`` is
the share of feature importance carried by the kept cells.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from ._rng import substream
from .data import Dataset
from .errors import BadDimension, WidthMismatch, ZeroImportance


@dataclass(frozen=True)
class Policy:
    """Per-row selection probability and the Beta shape of the mask size."""

    prob: float
    mag: float

    def __post_init__(self):
        if not 0.0 <= self.prob <= 1.0:
            raise ValueError(f"prob must lie in [0, 1], got {self.prob}")
        if not self.mag > 0.0:
            raise ValueError(f"mag must be positive, got {self.mag}")


NO_AUGMENTATION = Policy(0.0, 1.0)


@dataclass(frozen=True, eq=False)
class MixRecord:
    i: int
    j: int
    w: np.ndarray
    lam: float
    c: float

    def to_json(self):
        return {"i": int(self.i), "j": int(self.j), "w": self.w.astype(int).tolist(),
                "lambda": float(self.lam), "c": float(self.c)}


def _generator(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return substream(seed, "masks")


def mask_size(lam, d):
    """``clamp(round(lam * d), 1, d - 1)`` with halves rounded up."""
    return min(max(int(math.floor(lam * d + 0.5)), 1), d - 1)


def sample_mask(d, mag, rng):
    """Draw ``lam ~ Beta(mag, mag)`` and a 0/1 mask with ``mask_size(lam, d)`` ones."""
    if d < 2:
        raise BadDimension(f"need at least 2 features to mix, got {d}")
    if not mag > 0:
        raise ValueError("mag must be positive")
    rng = _generator(rng)
    lam = float(rng.beta(mag, mag))
    w = np.zeros(d, dtype=bool)
    w[rng.choice(d, mask_size(lam, d), replace=False)] = True
    return w, lam


def mix_coefficient(w, fi):
    fi = np.asarray(fi, dtype=np.float64)
    if np.any(fi < 0):
        raise ValueError("feature importances must be non-negative")
    total = fi.sum()
    if not total > 0:
        raise ZeroImportance("feature importances sum to zero")
    w = np.asarray(w, dtype=bool)
    if np.all(fi == fi[0]):
        # equal weights cancel; return the mask fraction without rounding drift
        return np.count_nonzero(w) / w.shape[0]
    return float(np.dot(w.astype(np.float64), fi) / total)


def mix_pair(x_i, x_j, y_i, y_j, w, fi):
    """Return ``(x_mixed, y_mixed, c)``; cells where ``w`` is set come from ``x_i``."""
    x_i, x_j = np.asarray(x_i), np.asarray(x_j)
    y_i, y_j = np.asarray(y_i, dtype=np.float64), np.asarray(y_j, dtype=np.float64)
    w = np.asarray(w, dtype=bool)
    d = x_i.shape[0]
    if x_j.shape[0] != d or w.shape[0] != d or np.shape(fi)[0] != d:
        raise WidthMismatch("x_i, x_j, w and fi must share one width")
    if y_i.shape != y_j.shape:
        raise WidthMismatch("label vectors differ in width")
    c = mix_coefficient(w, fi)
    return np.where(w, x_i, x_j), c * y_i + (1.0 - c) * y_j, c


def mix_rows(X, Y, policy, fi, rng):
    """Array form of :func:`apply_policy`; parents are always the original rows."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    n, d = X.shape
    if np.shape(fi)[0] != d:
        raise WidthMismatch(f"importance vector has width {np.shape(fi)[0]}, data has {d}")
    rng = _generator(rng)
    Xo, Yo = X.copy(), Y.copy()
    records = []
    if policy.prob <= 0.0 or n < 2:
        return Xo, Yo, records
    selected = rng.random(n) < policy.prob
    for i in np.flatnonzero(selected):
        j = int(rng.integers(0, n - 1))
        j += j >= i
        w, lam = sample_mask(d, policy.mag, rng)
        Xo[i], Yo[i], c = mix_pair(X[i], X[j], Y[i], Y[j], w, fi)
        records.append(MixRecord(int(i), j, w, lam, c))
    return Xo, Yo, records


def apply_policy(ds, policy, fi, seed=0):
    """Mix each row of ``ds`` with probability ``policy.prob``.

    A selected row is replaced by its mix with a partner drawn uniformly from
    the other rows; the dataset keeps its size. Returns the new dataset and
    one :class:`MixRecord` per replaced row.
    """
    X, Y, records = mix_rows(ds.X, ds.Y, policy, fi, _generator(seed))
    return Dataset(X, Y, ds.schema, ds.class_names), records


def dump_mix_records(records, path, layer=None):
    with open(path, "a", encoding="utf-8") as fh:
        for rec in records:
            obj = rec.to_json()
            if layer is not None:
                obj["layer"] = layer
            fh.write(json.dumps(obj) + "\n")

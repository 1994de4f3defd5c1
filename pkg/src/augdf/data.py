"""Tabular ingestion: schema, encoded datasets, stratified splits and folds."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ._rng import substream
from .errors import BadK, MissingValue, SchemaError, ShapeError, TooFewSamples, UnknownCategory

MISSING_TOKENS = ("", "?")
CONTINUOUS = "continuous"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class Column:
    name: str
    kind: str = CONTINUOUS
    categories: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == CATEGORICAL:
            cats = tuple(str(c) for c in (self.categories or ()))
            if not cats:
                raise SchemaError(f"categorical column {self.name!r} needs at least one category")
            if len(set(cats)) != len(cats):
                raise SchemaError(f"categorical column {self.name!r} has duplicate categories")
            object.__setattr__(self, "categories", cats)
        elif self.categories is not None:
            raise SchemaError(f"continuous column {self.name!r} cannot list categories")


@dataclass(frozen=True)
class Schema:
    """Ordered feature columns plus the name of the label column.

    ``label_categories`` fixes the class order when given; otherwise classes are
    taken from the data in sorted order.
    """

    columns: tuple
    label_column: str
    label_categories: Optional[tuple] = None

    def __post_init__(self):
        cols = tuple(self.columns)
        object.__setattr__(self, "columns", cols)
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise SchemaError("column names must be unique")
        if self.label_column in names:
            raise SchemaError("label column must not be among the feature columns")
        if self.label_categories is not None:
            cats = tuple(str(c) for c in self.label_categories)
            if len(set(cats)) != len(cats) or not cats:
                raise SchemaError("label categories must be non-empty and unique")
            object.__setattr__(self, "label_categories", cats)

    @property
    def names(self):
        return [c.name for c in self.columns]

    @property
    def d(self):
        return len(self.columns)

    def to_dict(self):
        cols = []
        for c in self.columns:
            entry = {"name": c.name, "kind": c.kind}
            if c.kind == CATEGORICAL:
                entry["categories"] = list(c.categories)
            cols.append(entry)
        if self.label_categories is not None:
            cols.append({"name": self.label_column, "kind": CATEGORICAL,
                         "categories": list(self.label_categories)})
        return {"label": self.label_column, "columns": cols}

    @classmethod
    def from_dict(cls, obj):
        try:
            label = obj["label"]
            raw = obj["columns"]
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"schema needs 'label' and 'columns': {exc}") from None
        columns, label_cats = [], None
        for entry in raw:
            if entry["name"] == label:
                label_cats = entry.get("categories")
                continue
            columns.append(Column(entry["name"], entry.get("kind", CONTINUOUS), entry.get("categories")))
        return cls(tuple(columns), label, tuple(label_cats) if label_cats else None)

    def digest(self):
        """sha256 over the canonical JSON form; used to pair models with data."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def load_schema(path):
    with open(path, encoding="utf-8") as fh:
        return Schema.from_dict(json.load(fh))


def save_schema(schema, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=2)


def _readonly(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    schema: Schema
    class_names: tuple = field(default=())

    def __post_init__(self):
        X, Y = _readonly(self.X), _readonly(self.Y)
        if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
            raise ShapeError(f"X {X.shape} and Y {Y.shape} disagree")
        if X.shape[1] != self.schema.d:
            raise ShapeError(f"X has {X.shape[1]} columns, schema has {self.schema.d}")
        if X.shape[1] < 2:
            raise ShapeError("at least two feature columns are required")
        names = tuple(self.class_names) or tuple(str(i) for i in range(Y.shape[1]))
        if len(names) != Y.shape[1]:
            raise ShapeError("class_names length must match Y width")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "class_names", names)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def C(self):
        return self.Y.shape[1]

    @property
    def labels(self):
        return np.argmax(self.Y, axis=1)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.X[idx], self.Y[idx], self.schema, self.class_names)

    def decode(self, column, value):
        """Original category label (or the float itself) for an encoded cell."""
        col = self.schema.columns[column]
        if col.kind == CATEGORICAL:
            return col.categories[int(value)]
        return float(value)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.C)


def one_hot(labels, C):
    labels = np.asarray(labels, dtype=np.intp)
    Y = np.zeros((labels.size, C))
    Y[np.arange(labels.size), labels] = 1.0
    return Y


def _label_key(s):
    # numeric-looking labels sort numerically, the rest lexically after them
    try:
        return (0, float(s), s)
    except ValueError:
        return (1, 0.0, s)


def load_csv(path, schema, missing_policy="impute", header=True):
    """Read a comma-separated file into an encoded :class:`Dataset`.

    Categoricals become ordinal codes in schema order; labels become one-hot
    rows. With ``missing_policy="impute"`` a missing continuous cell gets the
    column median and a missing categorical the column mode, both taken from
    this file. ``header=False`` reads files that carry no header row (such as
    the raw UCI dumps) and assumes schema column order, label last.
    """
    if missing_policy not in ("impute", "reject"):
        raise ValueError(f"missing_policy must be 'impute' or 'reject', got {missing_policy!r}")
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if header:
        if not rows:
            raise ShapeError(f"{path}: empty file")
        head, body = [h.strip() for h in rows[0]], rows[1:]
    else:
        head, body = schema.names + [schema.label_column], rows
    expected = set(schema.names) | {schema.label_column}
    if len(head) != len(set(head)) or set(head) != expected:
        raise SchemaError(f"{path}: header {head[:5]}... does not match schema columns")
    pos = {name: i for i, name in enumerate(head)}
    width = len(head)

    n, d = len(body), schema.d
    X = np.full((n, d), np.nan)
    raw_labels = []
    for r, row in enumerate(body):
        if len(row) != width:
            raise ShapeError(f"{path}: row {r + 1} has {len(row)} cells, expected {width}")
        lab = row[pos[schema.label_column]].strip()
        if lab in MISSING_TOKENS:
            raise MissingValue(f"{path}: row {r + 1} has no label")
        raw_labels.append(lab)
        for k, col in enumerate(schema.columns):
            cell = row[pos[col.name]].strip()
            if cell in MISSING_TOKENS:
                if missing_policy == "reject":
                    raise MissingValue(f"{path}: row {r + 1}, column {col.name!r} is missing")
                continue
            if col.kind == CATEGORICAL:
                try:
                    X[r, k] = col.categories.index(cell)
                except ValueError:
                    raise UnknownCategory(f"{path}: {cell!r} is not a category of {col.name!r}") from None
            else:
                try:
                    X[r, k] = float(cell)
                except ValueError:
                    raise SchemaError(f"{path}: {cell!r} in continuous column {col.name!r}") from None

    for k, col in enumerate(schema.columns):
        miss = np.isnan(X[:, k])
        if not miss.any():
            continue
        seen = X[~miss, k]
        if seen.size == 0:
            raise MissingValue(f"{path}: column {col.name!r} has no observed values to impute from")
        if col.kind == CATEGORICAL:
            fill = np.bincount(seen.astype(np.intp)).argmax()
        else:
            fill = np.median(seen)
        X[miss, k] = fill

    if schema.label_categories is not None:
        classes = schema.label_categories
        unknown = set(raw_labels) - set(classes)
        if unknown:
            raise UnknownCategory(f"{path}: labels {sorted(unknown)} not in schema label categories")
    else:
        classes = tuple(sorted(set(raw_labels), key=_label_key))
    index = {c: i for i, c in enumerate(classes)}
    labels = np.array([index[lab] for lab in raw_labels], dtype=np.intp)
    return Dataset(X, one_hot(labels, len(classes)), schema, classes)


def save_csv(ds, path):
    """Write ``ds`` back out with a header row, decoding categoricals."""
    schema = ds.schema
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(schema.names + [schema.label_column])
        for x, lab in zip(ds.X, ds.labels):
            cells = [ds.decode(k, v) for k, v in enumerate(x)]
            cells = [repr(c) if isinstance(c, float) else c for c in cells]
            w.writerow(cells + [ds.class_names[lab]])


def from_arrays(X, labels, categorical=(), class_names=None, names=None, label_column="label"):
    """Wrap in-memory arrays. Categorical columns must already hold codes 0..m-1."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    C = int(labels.max()) + 1 if class_names is None else len(class_names)
    names = names or [f"x{k}" for k in range(X.shape[1])]
    cols = []
    for k, name in enumerate(names):
        if k in set(categorical):
            m = int(X[:, k].max()) + 1
            cols.append(Column(name, CATEGORICAL, tuple(str(v) for v in range(m))))
        else:
            cols.append(Column(name))
    class_names = tuple(class_names) if class_names is not None else tuple(str(c) for c in range(C))
    schema = Schema(tuple(cols), label_column, class_names)
    return Dataset(X, one_hot(labels, C), schema, class_names)


def _test_count(count, fraction):
    t = int(math.floor(count * fraction + 0.5))
    return min(max(t, 1), count - 1)


def stratified_split_indices(labels, test_fraction, seed, keep_singletons=False):
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    labels = np.asarray(labels)
    rng = substream(seed, "split")
    train, test = [], []
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if members.size == 1 and keep_singletons:
            train.append(members)
            continue
        if members.size < 2:
            raise TooFewSamples(f"class {c} has {members.size} member(s); need at least 2")
        members = rng.permutation(members)
        t = _test_count(members.size, test_fraction)
        test.append(members[:t])
        train.append(members[t:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def stratified_split(ds, test_fraction=0.2, seed=0, keep_singletons=False):
    """Split ``ds`` per class into (train, test).

    Each class sends ``round(count * test_fraction)`` rows to the test part,
    clamped so both parts keep at least one member of every class. With
    ``keep_singletons`` a class with one row stays whole in the train part
    instead of raising (needed for nested splits on very skewed data).
    """
    tr, te = stratified_split_indices(ds.labels, test_fraction, seed, keep_singletons)
    return ds.subset(tr), ds.subset(te)


def kfold_indices(n, k, labels=None, seed=0):
    """Return ``k`` disjoint index arrays covering ``range(n)``.

    Rows are dealt class by class onto the folds in round-robin order, with the
    fold pointer carried over between classes, so fold sizes differ by at most
    one both per class and overall.
    """
    if not 2 <= k <= n:
        raise BadK(f"need 2 <= k <= n, got k={k}, n={n}")
    labels = np.zeros(n, dtype=np.intp) if labels is None else np.asarray(labels)
    if labels.shape[0] != n:
        raise ShapeError("labels length must equal n")
    rng = substream(seed, "kfold")
    folds = [[] for _ in range(k)]
    ptr = 0
    for c in np.unique(labels):
        for i in rng.permutation(np.flatnonzero(labels == c)):
            folds[ptr].append(i)
            ptr = (ptr + 1) % k
    return [np.sort(np.asarray(f, dtype=np.intp)) for f in folds]


def arrhythmia_schema(n_features=279, n_classes=16):
    """Schema for the headerless UCI ``arrhythmia.data`` file (class codes 1..16)."""
    cols = tuple(Column(f"a{k + 1}") for k in range(n_features))
    return Schema(cols, "class", tuple(str(c) for c in range(1, n_classes + 1)))


def load_uci_arrhythmia(path, missing_policy="impute"):
    return load_csv(path, arrhythmia_schema(), missing_policy=missing_policy, header=False)


def class_balance(ds: Dataset) -> Counter:
    return Counter(ds.class_names[i] for i in ds.labels)

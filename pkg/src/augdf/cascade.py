"""Layer-wise Deep Forest cascade with out-of-fold feature forwarding.

Layer 1 sees the raw features. Every later layer sees the raw features
followed by the previous layer's per-forest class-probability vectors. During
training those forwarded vectors are out-of-fold predictions; at inference
they come from the full-data forests. ``F_i`` (the model up to layer ``i``)
averages layer ``i``'s forests, and the checkpoint ensemble averages
``F_1 .. F_K`` uniformly.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from ._rng import derive_seed, substream
from .augment import NO_AUGMENTATION, Policy, mix_rows
from .errors import BadLayerIndex, EmptyModel, FormatError, LayerLimitReached, WidthMismatch
from .forest import (BAGGED, EXTRA, ForestParams, feature_importance, forest_to_json, oof_predict,
                     predict_forest, read_forest, write_forest)

CHECKPOINT_ENSEMBLE = "checkpoint_ensemble"
CV_SELECTED = "cv_selected"

MODEL_MAGIC = b"AGDM"
MODEL_VERSION = 1


@dataclass(frozen=True)
class CascadeParams:
    forests: tuple = (ForestParams(100, BAGGED), ForestParams(100, EXTRA))
    k_folds: int = 3
    max_layers: int = 15

    def __post_init__(self):
        object.__setattr__(self, "forests", tuple(self.forests))
        if not self.forests:
            raise ValueError("a layer needs at least one forest")
        if self.max_layers < 1:
            raise ValueError("max_layers must be >= 1")
        if self.k_folds < 2:
            raise ValueError("k_folds must be >= 2")

    @property
    def n_forests(self):
        return len(self.forests)

    def scaled(self, factor):
        """Same cascade with ``factor`` times the trees in every forest."""
        return replace(self, forests=tuple(p.scaled(factor) for p in self.forests))

    def to_dict(self):
        return {
            "forests": [dict(vars(p)) for p in self.forests],
            "k_folds": self.k_folds,
            "max_layers": self.max_layers,
        }

    @classmethod
    def from_dict(cls, obj):
        return cls(tuple(ForestParams(**p) for p in obj["forests"]), obj["k_folds"], obj["max_layers"])


@dataclass(frozen=True, eq=False)
class Layer:
    forests: tuple           # full-data forests, fixed order
    fi: np.ndarray           # pooled importance over this layer's input columns
    policy: Policy
    input_width: int
    oof: Optional[np.ndarray] = None     # n x (F*C) training-time forwarded block
    folds: Optional[tuple] = None        # held-out rows per fold
    fold_forests: Optional[tuple] = None

    def output(self, Z):
        """Per-forest probability matrices for the layer input ``Z``."""
        return [predict_forest(f, Z) for f in self.forests]


@dataclass(frozen=True, eq=False)
class CascadeModel:
    d: int
    C: int
    params: CascadeParams = CascadeParams()
    layers: tuple = ()
    mode: str = CHECKPOINT_ENSEMBLE
    selected_layer: Optional[int] = None
    schema_digest: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.mode not in (CHECKPOINT_ENSEMBLE, CV_SELECTED):
            raise ValueError(f"unknown mode {self.mode!r}")
        if (self.selected_layer is not None) != (self.mode == CV_SELECTED):
            raise ValueError("selected_layer is set exactly when mode is cv_selected")

    @property
    def K(self):
        return self.params.max_layers

    @property
    def n_layers(self):
        return len(self.layers)

    @property
    def forwarded_width(self):
        return self.params.n_forests * self.C

    def input_width(self, i):
        """Input width of (1-based) layer ``i``."""
        return self.d if i == 1 else self.d + self.forwarded_width

    @property
    def schedule(self):
        return [layer.policy for layer in self.layers]

    def with_layer(self, layer):
        return replace(self, layers=self.layers + (layer,))

    def strip_training_cache(self):
        """Drop OOF blocks and fold forests, keeping only what inference needs."""
        return replace(self, layers=tuple(replace(l, oof=None, folds=None, fold_forests=None) for l in self.layers))


def new_model(d, C, params=CascadeParams(), schema_digest=None):
    return CascadeModel(d, C, params, (), CHECKPOINT_ENSEMBLE, None, schema_digest)


def forward_features(x_raw, layer_outputs):
    """``[x_raw | out_1 | ... | out_F]``; works on single rows or row matrices."""
    x_raw = np.asarray(x_raw, dtype=np.float64)
    outs = [np.asarray(o, dtype=np.float64) for o in layer_outputs]
    if any(o.ndim != x_raw.ndim for o in outs):
        raise WidthMismatch("raw features and layer outputs must have matching rank")
    if x_raw.ndim == 2 and any(o.shape[0] != x_raw.shape[0] for o in outs):
        raise WidthMismatch("raw features and layer outputs differ in row count")
    widths = {o.shape[-1] for o in outs}
    if len(widths) > 1:
        raise WidthMismatch("layer outputs differ in class count")
    return np.concatenate([x_raw] + outs, axis=-1)


def mixing_importance(prev_fi, width):
    """Importance used to weight labels when mixing a layer input of ``width`` columns.

    Layer 1 has no preceding layer and gets a uniform vector. The second
    layer's input is wider than the first's; the forwarded columns, which have
    no importance estimate yet, receive the mean importance of the raw ones.
    """
    if prev_fi is None:
        return np.full(width, 1.0 / width)
    prev_fi = np.asarray(prev_fi, dtype=np.float64)
    if prev_fi.shape[0] == width:
        return prev_fi
    if prev_fi.shape[0] > width:
        raise WidthMismatch("previous importance is wider than the layer input")
    pad = np.full(width - prev_fi.shape[0], prev_fi.mean())
    fi = np.concatenate([prev_fi, pad])
    return fi / fi.sum()


def _training_input(model, X):
    if not model.layers:
        return X
    oof = model.layers[-1].oof
    if oof is None:
        raise EmptyModel("previous layer carries no out-of-fold block; cannot continue training")
    if oof.shape[0] != X.shape[0]:
        raise WidthMismatch("training rows changed between layers")
    return forward_features(X, [oof[:, j * model.C:(j + 1) * model.C] for j in range(model.params.n_forests)])


def train_layer(model, train, policy=NO_AUGMENTATION, seed=0, keep_fold_forests=False, on_mix=None):
    """Fit the next layer and return a new model with it appended.

    The layer input is the raw features plus the previous layer's cached
    out-of-fold outputs. Each fold's training part (and the full-data part) is
    mixed under ``policy``, with partners drawn from inside that part and
    labels weighted by the previous layer's pooled importance.
    """
    if model.n_layers >= model.K:
        raise LayerLimitReached(f"model already has {model.K} layers")
    X, Y = train.X, train.Y
    if X.shape[1] != model.d or Y.shape[1] != model.C:
        raise WidthMismatch("training data does not match the model's feature or class width")
    i = model.n_layers + 1
    Z = _training_input(model, X)
    prev_fi = model.layers[-1].fi if model.layers else None
    mix_fi = mixing_importance(prev_fi, Z.shape[1])

    def transform(Xt, Yt, rows, tag):
        if policy.prob <= 0.0:
            return Xt, Yt
        Xm, Ym, records = mix_rows(Xt, Yt, policy, mix_fi, substream(seed, "masks", i, tag))
        if on_mix is not None:
            # report partner/row ids in the caller's row numbering
            on_mix(i, tag, [replace(r, i=int(rows[r.i]), j=int(rows[r.j])) for r in records])
        return Xm, Ym

    res = oof_predict(Z, Y, model.params.forests, k=model.params.k_folds, labels=np.argmax(Y, axis=1),
                      seed=derive_seed(seed, "layer", i), transform=transform,
                      keep_fold_forests=keep_fold_forests)
    layer = Layer(
        forests=tuple(res.forests),
        fi=feature_importance(res.forests),
        policy=policy,
        input_width=Z.shape[1],
        oof=res.oof_matrix(),
        folds=tuple(res.folds),
        fold_forests=tuple(tuple(g) for g in res.fold_forests) if res.fold_forests else None,
    )
    return model.with_layer(layer)


@dataclass(frozen=True, eq=False)
class ForwardState:
    """Inference-time pass through a growing cascade, one layer at a time.

    Holds the next layer's input and the per-layer ``F_i`` matrices already
    computed, so adding a layer costs one layer's prediction.
    """

    X: np.ndarray
    Z: np.ndarray
    per_layer: tuple = ()

    @classmethod
    def start(cls, X):
        X = np.asarray(X, dtype=np.float64)
        return cls(X, X, ())

    def advance(self, layer):
        outs = layer.output(self.Z)
        F_i = np.mean(outs, axis=0)
        return ForwardState(self.X, forward_features(self.X, outs), self.per_layer + (F_i,))

    def ensemble(self):
        if not self.per_layer:
            raise EmptyModel("no layer has been applied")
        return np.mean(self.per_layer, axis=0)


def forward(model, X, upto=None):
    upto = model.n_layers if upto is None else upto
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.d:
        raise WidthMismatch(f"expected {model.d} raw features")
    state = ForwardState.start(X)
    for layer in model.layers[:upto]:
        state = state.advance(layer)
    return state


def predict_layers(model, X):
    """``[F_1(X), ..., F_K'(X)]`` from a single forward pass."""
    if not model.layers:
        raise EmptyModel("model has no trained layers")
    return list(forward(model, X).per_layer)


def predict_at_layer(model, X, i):
    """``F_i(X)``: raw rows through layers ``1..i``, then the mean of layer ``i``'s forests."""
    if not 1 <= i <= model.n_layers:
        raise BadLayerIndex(f"layer index {i} outside 1..{model.n_layers}")
    return forward(model, X, upto=i).per_layer[-1]


def predict_checkpoint_ensemble(model, X):
    if not model.layers:
        raise EmptyModel("model has no trained layers")
    return forward(model, X).ensemble()


def predict_proba(model, X):
    """Prediction under the model's own mode."""
    if model.mode == CV_SELECTED:
        return predict_at_layer(model, X, model.selected_layer)
    return predict_checkpoint_ensemble(model, X)


def accuracy(P, labels):
    # argmax ties resolve to the lowest class index
    return float(np.mean(np.argmax(P, axis=1) == np.asarray(labels)))


def layer_accuracies(model, X, labels):
    return [accuracy(P, labels) for P in predict_layers(model, X)]


def select_output_layer_cv(model, val):
    """1-based layer with the best validation accuracy; ties go to the shallowest."""
    if not model.layers:
        raise EmptyModel("model has no trained layers")
    if val.n == 0:
        raise ValueError("validation set is empty")
    accs = layer_accuracies(model, val.X, val.labels)
    return int(np.argmax(accs)) + 1


def with_cv_selection(model, val):
    return replace(model, mode=CV_SELECTED, selected_layer=select_output_layer_cv(model, val))


# ---------------------------------------------------------------- persistence

_MODEL_HEADER = struct.Struct("<4sHI")


def _model_meta(model, extra):
    return {
        "d": model.d,
        "C": model.C,
        "params": model.params.to_dict(),
        "mode": model.mode,
        "selected_layer": model.selected_layer,
        "schema_digest": model.schema_digest,
        "layers": [
            {"policy": {"prob": l.policy.prob, "mag": l.policy.mag},
             "fi": l.fi.tolist(), "input_width": l.input_width, "n_forests": len(l.forests)}
            for l in model.layers
        ],
        "extra": extra or {},
    }


def write_model(model, fh, extra=None):
    """Container: header (magic, version, metadata length), JSON metadata,
    then every layer's forests in order as forest containers."""
    meta = json.dumps(_model_meta(model, extra), sort_keys=True).encode("utf-8")
    fh.write(_MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, len(meta)))
    fh.write(meta)
    for layer in model.layers:
        for forest in layer.forests:
            write_forest(forest, fh)


def read_model(fh):
    head = fh.read(_MODEL_HEADER.size)
    if len(head) != _MODEL_HEADER.size:
        raise FormatError("truncated model container")
    magic, version, n = _MODEL_HEADER.unpack(head)
    if magic != MODEL_MAGIC:
        raise FormatError(f"bad model magic {magic!r}")
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model container version {version}")
    meta = json.loads(fh.read(n).decode("utf-8"))
    layers = []
    for lm in meta["layers"]:
        forests = tuple(read_forest(fh) for _ in range(lm["n_forests"]))
        fi = np.asarray(lm["fi"], dtype=np.float64)
        layers.append(Layer(forests, fi, Policy(**lm["policy"]), lm["input_width"]))
    model = CascadeModel(meta["d"], meta["C"], CascadeParams.from_dict(meta["params"]), tuple(layers),
                         meta["mode"], meta["selected_layer"], meta["schema_digest"])
    return model, meta.get("extra", {})


def save_model(model, path, extra=None):
    with open(path, "wb") as fh:
        write_model(model, fh, extra)


def load_model(path):
    with open(path, "rb") as fh:
        return read_model(fh)


def model_to_bytes(model, extra=None):
    buf = io.BytesIO()
    write_model(model, buf, extra)
    return buf.getvalue()


def export_json(model, full_trees=False):
    """Readable structural dump of a model."""
    out = _model_meta(model, None)
    out.pop("extra")
    for lm, layer in zip(out["layers"], model.layers):
        lm["forests"] = []
        for f in layer.forests:
            if full_trees:
                lm["forests"].append(forest_to_json(f))
            else:
                lm["forests"].append({"kind": f.kind, "n_trees": len(f.trees),
                                      "n_nodes": int(sum(t.n_nodes for t in f.trees)),
                                      "n_features": f.n_features})
    return out

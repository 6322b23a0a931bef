"""Classifiers with a uniform train/predict contract and JSON persistence.

Scores are P(MI) style numbers in [0, 1]: the leaf posterior (DT), the MI
vote fraction (RF), the sigmoid of the decision value (SVM), the weighted MI
neighbour share (k-NN) and the softmax MI output (CNN). The label is MI iff
the score is >= 0.5.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass

import numpy as np

from ..errors import TrainingError, ValidationError
from .cnn import Cnn1dArch, cnn_backward, cnn_complexity, cnn_forward, fit_cnn, output_lengths
from .forest import fit_forest, forest_votes
from .knn import knn_score
from .spec import (DEFAULTS, GRIDS, KINDS, ModelSpec, canonical_kind, expand_grid,
                   rng_stream)
from .svm import fit_svm, svm_decision
from .tree import TreeArrays, fit_tree

__all__ = [
    "KINDS", "GRIDS", "DEFAULTS", "ModelSpec", "TrainedModel", "train", "predict",
    "predict_batch", "expand_grid", "canonical_kind", "cnn_forward", "cnn_backward",
    "cnn_complexity", "Cnn1dArch", "output_lengths", "model_to_json", "model_from_json",
]


@dataclass(frozen=True)
class TrainedModel:
    spec: ModelSpec
    n_features: int
    state: dict  # name -> ndarray or scalar

    @property
    def kind(self):
        return self.spec.kind


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise ValidationError(f"X must be 2-D with one row per label; got {X.shape} and {y.shape}")
    if len(y) < 2:
        raise ValidationError("need at least two training samples")
    if not np.all(np.isin(y, (0, 1))):
        raise ValidationError("labels must be 0 (non-MI) or 1 (MI)")
    if len(np.unique(y)) < 2:
        raise ValidationError("training labels contain a single class")
    if not np.isfinite(X).all():
        raise ValidationError("training features contain non-finite values")
    return X, y.astype(int)


def train(spec: ModelSpec, X, y) -> TrainedModel:
    X, y = _check_xy(X, y)
    p, seed = spec.params, spec.seed
    if spec.kind == "DT":
        tree = fit_tree(X, y, np.ones(len(y)), p["criterion"], p["splitter"], p["max_features"],
                        rng_stream(seed, "tree/0"))
        state = _tree_state([tree])
    elif spec.kind == "RF":
        state = _tree_state(fit_forest(X, y, p, seed))
    elif spec.kind == "SVM":
        s = fit_svm(X, y, p)
        state = {"sv": s["sv"], "coef": s["coef"], "rho": np.array([s["rho"]]),
                 "iterations": np.array([float(s["iterations"])])}
    elif spec.kind == "KNN":
        if p["k"] > len(y):
            raise TrainingError(f"k={p['k']} exceeds the {len(y)} training samples")
        state = {"X": X.copy(), "y": y.astype(float)}
    else:
        try:
            arch, weights = fit_cnn(X, y, p, seed)
        except ValidationError as exc:
            raise ValidationError(f"CNN1D: {exc}") from None
        state = dict(weights)
    return TrainedModel(spec, X.shape[1], state)


def _tree_state(trees):
    state = {"n_trees": np.array([float(len(trees))])}
    for i, t in enumerate(trees):
        for name, arr in t.to_arrays().items():
            state[f"tree{i}/{name}"] = np.asarray(arr, dtype=float)
    return state


def _trees(model):
    n = int(model.state["n_trees"][0])
    return [TreeArrays.from_arrays({k: model.state[f"tree{i}/{k}"] for k in
                                    ("feature", "threshold", "left", "right", "value")})
            for i in range(n)]


def cnn_model(model: TrainedModel):
    p = model.spec.params
    arch = Cnn1dArch(model.n_features, p["filters"], p["kernel"], p["dense"], p["padding"])
    return arch, model.state


def scores(model: TrainedModel, X):
    """MI scores in [0, 1] for a batch of feature vectors."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ValidationError(f"expected feature vectors of length {model.n_features}, "
                              f"got shape {X.shape}")
    p = model.spec.params
    kind = model.kind
    if kind == "DT":
        return _trees(model)[0].predict_proba(X)[:, 1]
    if kind == "RF":
        return forest_votes(_trees(model), X)
    if kind == "SVM":
        st = {"sv": model.state["sv"].reshape(-1, model.n_features),
              "coef": model.state["coef"], "rho": float(model.state["rho"][0]),
              "kernel": p["kernel"], "gamma": p["gamma"]}
        d = svm_decision(st, X)
        return 1.0 / (1.0 + np.exp(-np.clip(d, -700, 700)))
    if kind == "KNN":
        return knn_score(model.state["X"], model.state["y"], X, p["k"], p["weights"], p["metric"])
    return cnn_forward(cnn_model(model), X)[:, 1]


def predict_batch(model: TrainedModel, X):
    s = scores(model, X)
    return (s >= 0.5).astype(int), s


def predict(model: TrainedModel, x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValidationError("predict takes a single feature vector")
    labels, s = predict_batch(model, x[None, :])
    return int(labels[0]), float(s[0])


def _encode(arr):
    a = np.ascontiguousarray(np.asarray(arr, dtype="<f8"))
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(d):
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(float)


def model_to_dict(model: TrainedModel):
    return {"format": "echomi-model/1", **model.spec.to_dict(), "n_features": model.n_features,
            "arrays": {k: _encode(v) for k, v in sorted(model.state.items())}}


def model_from_dict(d) -> TrainedModel:
    try:
        spec = ModelSpec.from_dict(d)
        state = {k: _decode(v) for k, v in d["arrays"].items()}
        return TrainedModel(spec, int(d["n_features"]), state)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed model file: {exc}") from None


def model_to_json(model: TrainedModel):
    return json.dumps(model_to_dict(model), sort_keys=True, indent=1)


def model_from_json(text) -> TrainedModel:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"model file is not JSON: {exc}") from None
    return model_from_dict(d)

"""Random forest: bagged CART trees with hard majority voting."""

from __future__ import annotations

import numpy as np

from .spec import rng_stream
from .tree import TreeArrays, fit_tree


def class_weights(y, mode):
    """Per-sample weights for ``balanced`` (n / (2 n_c)) or uniform weighting."""
    y = np.asarray(y, dtype=int)
    if mode is None:
        return np.ones(len(y))
    counts = np.bincount(y, minlength=2).astype(float)
    present = counts > 0
    w = np.zeros(2)
    w[present] = len(y) / (present.sum() * counts[present])
    return w[y]


def fit_forest(X, y, params, seed):
    n = len(y)
    mode = params["class_weight"]
    base = class_weights(y, "balanced" if mode == "balanced" else None)
    trees = []
    for i in range(params["n_trees"]):
        if params["bootstrap"]:
            idx = rng_stream(seed, f"bootstrap/{i}").integers(0, n, n)
            mult = np.bincount(idx, minlength=n).astype(float)
        else:
            idx = np.arange(n)
            mult = np.ones(n)
        if mode == "balanced_subsample":
            w = mult * _subsample_weights(y, idx)
        else:
            w = mult * base
        trees.append(fit_tree(X, y, w, params["criterion"], "best", params["max_features"],
                              rng_stream(seed, f"tree/{i}")))
    return trees


def _subsample_weights(y, idx):
    """Balanced class weights computed on the drawn (bootstrap) sample."""
    drawn = y[idx]
    counts = np.bincount(drawn, minlength=2).astype(float)
    present = counts > 0
    w = np.zeros(2)
    w[present] = len(drawn) / (present.sum() * counts[present])
    return w[y]


def forest_votes(trees: list[TreeArrays], X):
    """Fraction of trees voting MI (a tree votes MI when its leaf has P(MI) >= 0.5)."""
    votes = np.stack([t.predict_proba(X)[:, 1] >= 0.5 for t in trees])
    return votes.mean(axis=0)

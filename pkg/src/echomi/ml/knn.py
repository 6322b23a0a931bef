"""Brute-force k-nearest neighbours. Every search algorithm resolves to this."""

from __future__ import annotations

import numpy as np


def pairwise(A, B, metric):
    diff = np.asarray(A, float)[:, None, :] - np.asarray(B, float)[None, :, :]
    if metric == "manhattan":
        return np.abs(diff).sum(-1)
    return np.sqrt((diff * diff).sum(-1))


def knn_score(X_train, y_train, X, k, weights, metric):
    """P(MI) among the k nearest training rows; ties in distance keep training order."""
    D = pairwise(X, X_train, metric)
    nn = np.argsort(D, axis=1, kind="stable")[:, :k]
    d = np.take_along_axis(D, nn, axis=1)
    lab = np.asarray(y_train)[nn].astype(float)
    if weights == "uniform":
        return lab.mean(axis=1)
    zero = d <= 0
    has_zero = zero.any(axis=1)
    with np.errstate(divide="ignore"):
        w = np.where(has_zero[:, None], zero.astype(float), 1.0 / np.where(zero, 1.0, d))
    return (w * lab).sum(1) / w.sum(1)

"""Soft-margin SVM trained by SMO with maximal-violating-pair selection."""

from __future__ import annotations

import numpy as np

TOL = 1e-3
MAX_ITER = 10_000
_TAU = 1e-12


def kernel_matrix(A, B, kernel, gamma):
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    if kernel == "linear":
        return A @ B.T
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


def canonical_order(X, y):
    """Row order independent of how the caller shuffled the training set."""
    keys = [y] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    return np.lexsort(keys[::-1])


def smo(K, y, C, tol=TOL, max_iter=MAX_ITER):
    """Solve the dual for labels y in {-1, +1}; returns (alpha, rho, iterations)."""
    n = len(y)
    Q = (y[:, None] * y[None, :]) * K
    QD = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    while it < max_iter:
        yG = -y * G
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not low.any():
            break
        i = int(np.flatnonzero(up)[np.argmax(yG[up])])
        j = int(np.flatnonzero(low)[np.argmin(yG[low])])
        if yG[i] - yG[j] < tol:
            break
        it += 1
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = max(QD[i] + QD[j] + 2.0 * Q[i, j], _TAU)
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, diff
            elif alpha[i] < 0:
                alpha[i], alpha[j] = 0.0, -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, C - diff
            elif alpha[j] > C:
                alpha[j], alpha[i] = C, C + diff
        else:
            quad = max(QD[i] + QD[j] - 2.0 * Q[i, j], _TAU)
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i], alpha[j] = C, total - C
                if alpha[j] > C:
                    alpha[j], alpha[i] = C, total - C
            else:
                if alpha[j] < 0:
                    alpha[j], alpha[i] = 0.0, total
                if alpha[i] < 0:
                    alpha[i], alpha[j] = 0.0, total
        G += Q[i] * (alpha[i] - ai) + Q[j] * (alpha[j] - aj)
    return alpha, _rho(alpha, G, y, C), it


def _rho(alpha, G, y, C):
    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(yG[free].mean())
    at_upper = alpha >= C
    ub_mask = (at_upper & (y < 0)) | (~at_upper & (y > 0))
    lb_mask = ~ub_mask
    ub = yG[ub_mask].min() if ub_mask.any() else np.inf
    lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
    if not np.isfinite(ub):
        return float(lb)
    if not np.isfinite(lb):
        return float(ub)
    return float(0.5 * (ub + lb))


def fit_svm(X, y01, params):
    X = np.asarray(X, dtype=float)
    order = canonical_order(X, y01)
    X, y01 = X[order], np.asarray(y01)[order]
    y = np.where(y01 == 1, 1.0, -1.0)
    K = kernel_matrix(X, X, params["kernel"], params["gamma"])
    alpha, rho, it = smo(K, y, params["C"])
    sv = alpha > 0
    return {"sv": X[sv], "coef": alpha[sv] * y[sv], "rho": rho, "iterations": it,
            "kernel": params["kernel"], "gamma": params["gamma"]}


def svm_decision(state, X):
    K = kernel_matrix(np.asarray(X, dtype=float), state["sv"], state["kernel"], state["gamma"])
    return K @ state["coef"] - state["rho"]


def kkt_violation(alpha, y, K, rho, C):
    """Largest violation of the margin conditions, for labels y in {-1, +1}."""
    margin = y * (K @ (alpha * y) - rho)
    viol = np.maximum(0.0, 1.0 - margin)  # alpha = 0 needs margin >= 1
    viol = np.where(alpha >= C, np.maximum(0.0, margin - 1.0), viol)
    viol = np.where((alpha > 0) & (alpha < C), np.abs(margin - 1.0), viol)
    return float(viol.max())

"""CART decision tree for two classes with sample weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spec import resolve_max_features


def _impurity(counts, criterion):
    """Impurity of (…, 2) weighted class counts; empty nodes score 0."""
    total = counts.sum(axis=-1)
    safe = np.where(total > 0, total, 1.0)
    p = counts / safe[..., None]
    if criterion == "gini":
        return 1.0 - np.sum(p * p, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.where(p > 0, np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return -np.sum(p * logs, axis=-1)


@dataclass
class TreeArrays:
    feature: np.ndarray  # -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, 2) class distribution

    def apply(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(len(X), dtype=int)
        active = self.feature[node] >= 0
        while active.any():
            n = node[active]
            go_left = X[active, self.feature[n]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return node

    def predict_proba(self, X):
        return self.value[self.apply(X)]

    @property
    def n_nodes(self):
        return len(self.feature)

    def to_arrays(self):
        return {"feature": self.feature.astype(float), "threshold": self.threshold,
                "left": self.left.astype(float), "right": self.right.astype(float),
                "value": self.value}

    @classmethod
    def from_arrays(cls, a):
        return cls(a["feature"].astype(int), a["threshold"], a["left"].astype(int),
                   a["right"].astype(int), a["value"].reshape(-1, 2))


def _best_threshold(x, y, w, criterion, parent_imp):
    order = np.argsort(x, kind="stable")
    xs, ys, ws = x[order], y[order], w[order]
    onehot = np.zeros((len(xs), 2))
    onehot[np.arange(len(xs)), ys] = ws
    cum = np.cumsum(onehot, axis=0)
    total = cum[-1]
    cut = np.flatnonzero(xs[:-1] < xs[1:])
    if len(cut) == 0:
        return None
    left = cum[cut]
    right = total - left
    wl, wr = left.sum(axis=1), right.sum(axis=1)
    child = (wl * _impurity(left, criterion) + wr * _impurity(right, criterion)) / total.sum()
    i = int(np.argmin(child))
    thr = 0.5 * (xs[cut[i]] + xs[cut[i] + 1])
    if thr >= xs[cut[i] + 1]:  # midpoint rounded up onto the next value
        thr = xs[cut[i]]
    return parent_imp - child[i], thr


def _random_threshold(x, y, w, criterion, parent_imp, rng):
    lo, hi = x.min(), x.max()
    thr = rng.uniform(lo, hi)
    if thr >= hi:
        thr = lo
    mask = x <= thr
    counts = np.zeros((2, 2))
    np.add.at(counts, (mask.astype(int) ^ 1, y), w)  # row 0 = left, row 1 = right
    total = counts.sum()
    child = (counts[0].sum() * _impurity(counts[0], criterion)
             + counts[1].sum() * _impurity(counts[1], criterion)) / total
    return parent_imp - child, thr


def fit_tree(X, y, sample_weight, criterion="gini", splitter="best", max_features="all",
             rng=None) -> TreeArrays:
    """Grow until leaves are pure or no split separates their samples.

    Features are visited in a random order; the search stops once
    ``max_features`` non-constant features have been tried and a valid split
    exists, continuing past that count when needed.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=int)
    w = np.asarray(sample_weight, dtype=float)
    n_features = X.shape[1]
    m = resolve_max_features(max_features, n_features)
    rng = rng or np.random.default_rng(0)

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(np.zeros(2))
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.flatnonzero(w > 0))]
    while stack:
        node, idx = stack.pop()
        counts = np.bincount(y[idx], weights=w[idx], minlength=2)
        value[node] = counts / counts.sum()
        if len(idx) < 2 or np.count_nonzero(counts) < 2:
            continue
        parent_imp = float(_impurity(counts, criterion))
        best = None
        visited = 0
        for f in rng.permutation(n_features):
            x = X[idx, f]
            if x.max() <= x.min():
                continue
            visited += 1
            if splitter == "best":
                found = _best_threshold(x, y[idx], w[idx], criterion, parent_imp)
            else:
                found = _random_threshold(x, y[idx], w[idx], criterion, parent_imp, rng)
            if found is not None and (best is None or found[0] > best[0]):
                best = (found[0], int(f), float(found[1]))
            if visited >= m and best is not None:
                break
        if best is None:
            continue
        _, f, thr = best
        go_left = X[idx, f] <= thr
        feature[node], threshold[node] = f, thr
        li, ri = new_node(), new_node()
        left[node], right[node] = li, ri
        stack.append((ri, idx[~go_left]))
        stack.append((li, idx[go_left]))

    return TreeArrays(np.array(feature), np.array(threshold), np.array(left), np.array(right),
                      np.array(value).reshape(-1, 2))

"""Two-layer 1D CNN: (conv -> ReLU -> maxpool 2) x 2 -> dense -> ReLU -> 2-way softmax.

Plain numpy in float64, full-batch Adam on categorical cross-entropy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ValidationError
from .spec import rng_stream

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W3", "b3", "W4", "b4")


def output_lengths(n_features, kernel, padding="valid"):
    """Signal length after conv1, pool1, conv2, pool2."""
    trim = 0 if padding == "same" else kernel - 1
    lengths, n = [], int(n_features)
    for _ in range(2):
        n = n - trim
        if n < 1:
            raise ValidationError(f"kernel {kernel} collapses a length-{n_features} input")
        lengths.append(n)
        n //= 2
        if n < 1:
            raise ValidationError(f"pooling collapses a length-{n_features} input")
        lengths.append(n)
    return lengths


@dataclass(frozen=True)
class Cnn1dArch:
    n_inputs: int
    filters: int
    kernel: int
    dense: int = 16
    padding: str = "valid"

    def __post_init__(self):
        if min(self.n_inputs, self.filters, self.kernel, self.dense) < 1:
            raise ValidationError("CNN dimensions must be positive")
        if self.padding == "same" and self.kernel % 2 == 0:
            raise ValidationError("same padding needs an odd kernel")
        output_lengths(self.n_inputs, self.kernel, self.padding)

    @property
    def flat(self):
        return self.filters * output_lengths(self.n_inputs, self.kernel, self.padding)[-1]

    def shapes(self):
        B, K = self.filters, self.kernel
        return {"W1": (B, 1, K), "b1": (B,), "W2": (B, B, K), "b2": (B,),
                "W3": (self.dense, self.flat), "b3": (self.dense,), "W4": (2, self.dense),
                "b4": (2,)}

    def complexity_terms(self):
        """(L, N, K, V) of the convolution cost model for this network."""
        lengths = output_lengths(self.n_inputs, self.kernel, self.padding)
        return 2, [1, self.filters, self.filters], [self.kernel] * 2, [self.n_inputs, lengths[1]]


def cnn_complexity(L, N, K, V):
    """Multiplication count of L convolutional layers.

    N holds the connection counts N_0..N_L; K and V the kernel sizes and
    input lengths of layers 0..L-1.
    """
    if L == 0:
        return 0
    if len(N) != L + 1 or len(K) != L or len(V) != L:
        raise ValidationError("expected L+1 connection counts and L kernel/length entries")
    if min(list(N) + list(K) + list(V)) < 1:
        raise ValidationError("all dimensions must be positive")
    c = sum(N[l - 1] * N[l] * V[l - 1] * K[l - 1] ** 2 for l in range(1, L + 1))
    c += sum(N[l + 1] * N[l] * (K[l] + V[l]) * K[l] ** 2 for l in range(L))
    c += sum(N[l + 1] * N[l] * K[l] * (K[l] + V[l]) ** 2 for l in range(L))
    return int(c)


def init_params(arch: Cnn1dArch, seed):
    """Glorot-uniform weights, zero biases."""
    rng = rng_stream(seed, "cnn/init")
    params = {}
    for name, shape in arch.shapes().items():
        if name.startswith("b"):
            params[name] = np.zeros(shape)
            continue
        if len(shape) == 3:
            fan_in, fan_out = shape[1] * shape[2], shape[0] * shape[2]
        else:
            fan_in, fan_out = shape[1], shape[0]
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-limit, limit, size=shape)
    return params


def _pad(x, arch):
    if arch.padding == "same":
        p = arch.kernel // 2
        return np.pad(x, ((0, 0), (0, 0), (p, p)))
    return x


def _conv(x, W, b, arch):
    xp = _pad(x, arch)
    win = sliding_window_view(xp, W.shape[2], axis=2)  # (n, c, L, k)
    return np.einsum("nclk,ock->nol", win, W) + b[None, :, None], win


def _conv_back(dz, win, W, arch, in_len):
    dW = np.einsum("nol,nclk->ock", dz, win)
    db = dz.sum(axis=(0, 2))
    n, _, L = dz.shape
    dxp = np.zeros((n, W.shape[1], L + W.shape[2] - 1))
    for k in range(W.shape[2]):
        dxp[:, :, k:k + L] += np.einsum("nol,oc->ncl", dz, W[:, :, k])
    if arch.padding == "same":
        p = arch.kernel // 2
        dxp = dxp[:, :, p:p + in_len]
    return dxp, dW, db


def _pool(a):
    n, c, L = a.shape
    half = L // 2
    pairs = a[:, :, :2 * half].reshape(n, c, half, 2)
    arg = np.argmax(pairs, axis=3)  # first max on ties
    return np.take_along_axis(pairs, arg[..., None], axis=3)[..., 0], arg


def _pool_back(dp, arg, L):
    n, c, half = dp.shape
    out = np.zeros((n, c, half, 2))
    np.put_along_axis(out, arg[..., None], dp[..., None], axis=3)
    full = np.zeros((n, c, L))
    full[:, :, :2 * half] = out.reshape(n, c, 2 * half)
    return full


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_input(arch, X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != arch.n_inputs:
        raise ValidationError(f"CNN expects inputs of length {arch.n_inputs}, got shape {X.shape}")
    return X


def _forward(arch, p, X):
    cache = {}
    h0 = X[:, None, :]
    z1, cache["win1"] = _conv(h0, p["W1"], p["b1"], arch)
    a1 = np.maximum(z1, 0.0)
    p1, cache["arg1"] = _pool(a1)
    z2, cache["win2"] = _conv(p1, p["W2"], p["b2"], arch)
    a2 = np.maximum(z2, 0.0)
    p2, cache["arg2"] = _pool(a2)
    f = p2.reshape(len(X), -1)
    z3 = f @ p["W3"].T + p["b3"]
    a3 = np.maximum(z3, 0.0)
    z4 = a3 @ p["W4"].T + p["b4"]
    cache.update(z1=z1, p1=p1, z2=z2, p2=p2, f=f, z3=z3, a3=a3)
    return _softmax(z4), cache


def cnn_forward(model, x):
    """Class probabilities (non-MI, MI) for one vector or a batch."""
    arch, params = model
    probs, _ = _forward(arch, params, _check_input(arch, x))
    return probs[0] if np.ndim(x) == 1 else probs


def cnn_loss(model, X, target, weight=1.0):
    arch, params = model
    probs, _ = _forward(arch, params, _check_input(arch, X))
    t = _targets(target, len(probs))
    return float(-weight * np.sum(t * np.log(np.clip(probs, 1e-300, None))) / len(probs))


def _targets(target, n):
    t = np.asarray(target)
    if t.ndim == 2:
        return t.astype(float)
    return np.eye(2)[np.broadcast_to(np.atleast_1d(t).astype(int), (n,))]


def cnn_backward(model, X, target, weight=1.0):
    """Gradients of the weighted mean cross-entropy; returns (grads, loss).

    ``target`` is a class label (or vector of labels) or one-hot rows.
    """
    arch, p = model
    X = _check_input(arch, X)
    probs, c = _forward(arch, p, X)
    n = len(X)
    t = _targets(target, n)
    loss = float(-weight * np.sum(t * np.log(np.clip(probs, 1e-300, None))) / n)
    g = {}
    dz4 = weight * (probs - t) / n
    g["W4"] = dz4.T @ c["a3"]
    g["b4"] = dz4.sum(0)
    dz3 = (dz4 @ p["W4"]) * (c["z3"] > 0)
    g["W3"] = dz3.T @ c["f"]
    g["b3"] = dz3.sum(0)
    dp2 = (dz3 @ p["W3"]).reshape(c["p2"].shape)
    dz2 = _pool_back(dp2, c["arg2"], c["z2"].shape[2]) * (c["z2"] > 0)
    dp1, g["W2"], g["b2"] = _conv_back(dz2, c["win2"], p["W2"], arch, c["p1"].shape[2])
    dz1 = _pool_back(dp1, c["arg1"], c["z1"].shape[2]) * (c["z1"] > 0)
    _, g["W1"], g["b1"] = _conv_back(dz1, c["win1"], p["W1"], arch, arch.n_inputs)
    return g, loss


def fit_cnn(X, y, params, seed):
    arch = Cnn1dArch(X.shape[1], params["filters"], params["kernel"], params["dense"],
                     params["padding"])
    weights = init_params(arch, seed)
    lr, b1, b2, eps = params["lr"], 0.9, 0.999, 1e-8
    m = {k: np.zeros_like(v) for k, v in weights.items()}
    v = {k: np.zeros_like(w) for k, w in weights.items()}
    y = np.asarray(y, dtype=int)
    for epoch in range(1, params["epochs"] + 1):
        grads, _ = cnn_backward((arch, weights), X, y)
        for k in PARAM_NAMES:
            m[k] = b1 * m[k] + (1 - b1) * grads[k]
            v[k] = b2 * v[k] + (1 - b2) * grads[k] ** 2
            mhat = m[k] / (1 - b1 ** epoch)
            vhat = v[k] / (1 - b2 ** epoch)
            weights[k] = weights[k] - lr * mhat / (np.sqrt(vhat) + eps)
    return arch, weights

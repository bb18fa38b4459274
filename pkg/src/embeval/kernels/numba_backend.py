"""Numba-jitted mirrors of the numpy kernels (single-threaded, no fastmath).

Kept loop-level so small batches avoid numpy temporary churn. Semantics match
numpy_backend up to summation order.
"""
import numpy as np
from numba import njit


@njit(cache=True)
def softmax_xent(logits, labels):
    n, k = logits.shape
    dlogits = np.empty((n, k))
    loss = 0.0
    for i in range(n):
        m = logits[i, 0]
        for j in range(1, k):
            if logits[i, j] > m:
                m = logits[i, j]
        denom = 0.0
        for j in range(k):
            e = np.exp(logits[i, j] - m)
            dlogits[i, j] = e
            denom += e
        y = labels[i]
        loss -= (logits[i, y] - m) - np.log(denom)
        for j in range(k):
            dlogits[i, j] /= denom
        dlogits[i, y] -= 1.0
    for i in range(n):
        for j in range(k):
            dlogits[i, j] /= n
    return loss / n, dlogits


@njit(cache=True)
def binary_xent(logits, targets):
    n, k = logits.shape
    dlogits = np.empty((n, k))
    total = n * k
    loss = 0.0
    for i in range(n):
        for j in range(k):
            z = logits[i, j]
            loss += np.log1p(np.exp(-abs(z))) + max(z, 0.0) - z * targets[i, j]
            sig = 1.0 / (1.0 + np.exp(-z))
            dlogits[i, j] = (sig - targets[i, j]) / total
    return loss / total, dlogits


@njit(cache=True)
def normalize_rows(x):
    n, d = x.shape
    out = np.empty((n, d))
    norms = np.empty(n)
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += x[i, j] * x[i, j]
        r = np.sqrt(s)
        norms[i] = r
        safe = r if r > 0.0 else 1.0
        for j in range(d):
            out[i, j] = x[i, j] / safe
    return out, norms


@njit(cache=True)
def sgd_update(p, g, lr):
    for i in range(p.shape[0]):
        p[i] -= lr * g[i]


@njit(cache=True)
def momentum_update(p, buf, g, lr, mu):
    for i in range(p.shape[0]):
        buf[i] = mu * buf[i] + g[i]
        p[i] -= lr * buf[i]


@njit(cache=True)
def adamw_update(p, m, v, g, lr, beta1, beta2, eps, t):
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for i in range(p.shape[0]):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        p[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)

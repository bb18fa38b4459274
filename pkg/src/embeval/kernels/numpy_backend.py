"""Pure-numpy implementations of the hot training kernels.

Reference semantics for the numba backend; always available. All inputs are
C-contiguous float64 (labels int64). Optimizer updates mutate in place.
"""
import numpy as np


def softmax_xent(logits, labels):
    """Mean softmax cross-entropy over rows plus gradient w.r.t. logits.

    Returns (loss, dlogits) with dlogits = (softmax - onehot) / n.
    """
    n = logits.shape[0]
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    logp = z - np.log(denom)
    loss = -logp[np.arange(n), labels].sum() / n
    dlogits = ez / denom
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits


def binary_xent(logits, targets):
    """Mean per-element sigmoid binary cross-entropy plus gradient.

    Reduction is the mean over all n*K elements; dlogits = (sigmoid - y)/(n*K).
    """
    n, k = logits.shape
    # log(1 + exp(-|z|)) + max(z, 0) - z*y, numerically stable
    loss = (np.log1p(np.exp(-np.abs(logits))) + np.maximum(logits, 0.0)
            - logits * targets).sum() / (n * k)
    sig = 1.0 / (1.0 + np.exp(-logits))
    dlogits = (sig - targets) / (n * k)
    return loss, dlogits


def normalize_rows(x):
    """Unit-normalize rows; zero rows are left unchanged. Returns (out, norms)."""
    norms = np.sqrt((x * x).sum(axis=1))
    safe = np.where(norms > 0.0, norms, 1.0)
    return x / safe[:, None], norms


def sgd_update(p, g, lr):
    p -= lr * g


def momentum_update(p, buf, g, lr, mu):
    buf *= mu
    buf += g
    p -= lr * buf


def adamw_update(p, m, v, g, lr, beta1, beta2, eps, t):
    """AdamW moment update and parameter step (decay is applied separately)."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)

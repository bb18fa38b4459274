"""From-scratch losses, gradients, optimizers, and the plateau lr controller.

Every gradient is analytic and finite-difference checkable in float64. Weight
decay is decoupled for all optimizers: parameters are scaled by (1 - lr*alpha)
before the gradient-based step, so the decay path is identical whether the
step itself is plain SGD, momentum SGD, or AdamW.
"""
import dataclasses

import numpy as np

from . import kernels
from .heads import forward_pass

OPTIMIZERS = ("sgd", "sgd-momentum", "adamw")
CONTROLS = ("fixed-epochs", "plateau")
LOSSES = ("softmax-ce", "per-class-binary-ce")


class DivergenceError(Exception):
    """Raised when a loss or gradient stops being finite."""


@dataclasses.dataclass
class TrainConfig:
    # Table-anchored defaults: eta 1e-4, alpha 0.05, batch 4
    eta: float = 1e-4
    alpha: float = 0.05
    batch_size: int = 4
    optimizer: str = "adamw"
    epochs: int = 50
    control: str = "fixed-epochs"
    loss: str = "softmax-ce"
    seed: int = 0
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    plateau_patience: int = 3
    plateau_factor: float = 0.1
    plateau_terminate: int = 9

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError("learning rate must be positive")
        if self.alpha < 0:
            raise ValueError("weight decay must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.control not in CONTROLS:
            raise ValueError(f"unknown control {self.control!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if not self.plateau_patience < self.plateau_terminate:
            raise ValueError("plateau patience must be below the termination count")

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


# ---------------------------------------------------------------------------
# loss and gradients

def loss_and_grad(assembly, features, labels, config):
    """Mean batch loss and gradients for every trainable parameter.

    softmax-ce expects integer labels; per-class-binary-ce expects an (n, K)
    0/1 membership matrix and averages over all n*K logits. Weight decay is
    NOT folded in here; it is applied decoupled at step time.
    """
    if len(features) == 0:
        raise ValueError("empty batch")
    cache = forward_pass(assembly, features)
    n, k = cache.logits.shape

    if config.loss == "softmax-ce":
        labels = np.ascontiguousarray(labels, dtype=np.int64)
        if labels.ndim != 1 or len(labels) != n:
            raise ValueError(f"softmax-ce labels must be ({n},), got {labels.shape}")
        if labels.min() < 0 or labels.max() >= k:
            raise ValueError(f"label out of range 0..{k - 1}")
        loss, dlogits = kernels.softmax_xent(cache.logits, labels)
    else:
        targets = np.ascontiguousarray(labels, dtype=np.float64)
        if targets.shape != (n, k):
            raise ValueError(f"binary-ce labels must be ({n}, {k}), got {targets.shape}")
        loss, dlogits = kernels.binary_xent(cache.logits, targets)

    grads = _backward(assembly, cache, dlogits)
    return loss, grads


def _backward(assembly, cache, dlogits):
    tau = assembly.temperature
    grads = {
        "W": tau * (cache.feats.T @ dlogits),
        "b": tau * dlogits.sum(axis=0),
    }
    path = assembly.feature_path
    if path == "frozen":
        return grads

    dfeats = tau * (dlogits @ assembly.W.T)
    if assembly.space == "joint":
        if assembly.normalize_input:
            # feats = raw / max(norm, eps); rows with zero norm pass through
            norms = cache.norms
            safe = np.where(norms > 0.0, norms, 1.0)[:, None]
            inner = (dfeats * cache.feats).sum(axis=1, keepdims=True)
            draw = (dfeats - np.where(norms[:, None] > 0.0,
                                      inner * cache.feats, 0.0)) / safe
        else:
            draw = dfeats
        if path == "train-projection":
            grads["P_v"] = draw.T @ cache.path_out
            return grads
        dpath = draw @ assembly.proj
    else:
        dpath = dfeats

    # residual adaptor: path_out = x + tanh(x @ w_in + b_in) @ w_out + b_out
    a = assembly.adaptor
    grads["adaptor.w_out"] = cache.tanh_z.T @ dpath
    grads["adaptor.b_out"] = dpath.sum(axis=0)
    dz = (dpath @ a.w_out.T) * (1.0 - cache.tanh_z ** 2)
    grads["adaptor.w_in"] = cache.x.T @ dz
    grads["adaptor.b_in"] = dz.sum(axis=0)
    return grads


# ---------------------------------------------------------------------------
# optimizers

@dataclasses.dataclass
class OptimizerState:
    step_count: int = 0
    slots: dict = dataclasses.field(default_factory=dict)  # name -> moment arrays


def make_optimizer_state(params, config):
    state = OptimizerState()
    for name, p in params.items():
        if not (p.flags.c_contiguous and p.dtype == np.float64):
            raise ValueError(f"parameter {name} must be C-contiguous float64")
        if config.optimizer == "sgd-momentum":
            state.slots[name] = (np.zeros(p.size),)
        elif config.optimizer == "adamw":
            state.slots[name] = (np.zeros(p.size), np.zeros(p.size))
        else:
            state.slots[name] = ()
    return state


def optimizer_step(state, params, grads, config, lr=None):
    """One deterministic in-place update; returns the mutated state.

    Decoupled decay p *= (1 - lr*alpha) applies to every parameter first.
    Raises DivergenceError on any non-finite gradient.
    """
    lr = config.eta if lr is None else lr
    for name in params:
        if not np.isfinite(grads[name]).all():
            raise DivergenceError(f"non-finite gradient for {name}")
    state.step_count += 1
    decay = 1.0 - lr * config.alpha
    for name, p in params.items():
        flat = p.reshape(-1)
        if config.alpha != 0.0:
            flat *= decay
        g = np.ascontiguousarray(grads[name], dtype=np.float64).reshape(-1)
        if config.optimizer == "sgd":
            kernels.sgd_update(flat, g, lr)
        elif config.optimizer == "sgd-momentum":
            (buf,) = state.slots[name]
            kernels.momentum_update(flat, buf, g, lr, config.momentum)
        else:
            m, v = state.slots[name]
            kernels.adamw_update(flat, m, v, g, lr, config.beta1, config.beta2,
                                 config.eps, state.step_count)
    return state


# ---------------------------------------------------------------------------
# plateau learning-rate control

@dataclasses.dataclass(frozen=True)
class PlateauState:
    """Step-wise lr decay driven by consecutive non-improving epochs.

    Improvement is strictly greater-than (all metrics are higher-is-better).
    Every `patience` consecutive bad epochs multiply the lr by `factor`; the
    bad-epoch counter keeps running rather than resetting, and `terminate`
    consecutive bad epochs end training (no decay on the terminating epoch).
    """
    lr: float
    best: float = -np.inf
    bad_epochs: int = 0
    terminated: bool = False
    patience: int = 3
    factor: float = 0.1
    terminate: int = 9


def plateau_step(state, metric):
    """Feed one epoch's validation metric; returns the successor state."""
    if state.terminated:
        raise RuntimeError("plateau controller already terminated")
    if not np.isfinite(metric):
        raise ValueError(f"non-finite validation metric {metric!r}")
    if metric > state.best:
        return dataclasses.replace(state, best=metric, bad_epochs=0)
    bad = state.bad_epochs + 1
    if bad >= state.terminate:
        return dataclasses.replace(state, bad_epochs=bad, terminated=True)
    if bad % state.patience == 0:
        return dataclasses.replace(state, bad_epochs=bad, lr=state.lr * state.factor)
    return dataclasses.replace(state, bad_epochs=bad)

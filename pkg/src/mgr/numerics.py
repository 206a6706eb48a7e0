"""Dense kernels, losses, AdamW and a finite-difference gradient checker.

Everything works on float64 numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def relu(m) -> np.ndarray:
    return np.maximum(m, 0.0)


def relu_backward(m, upstream) -> np.ndarray:
    m = np.asarray(m)
    upstream = np.asarray(upstream)
    if m.shape != upstream.shape:
        raise ValueError(f"relu_backward shape mismatch: {m.shape} vs {upstream.shape}")
    return np.where(m > 0.0, upstream, 0.0)


def sigmoid(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def bce_loss(logits, targets):
    """Mean binary cross-entropy on logits; returns ``(loss, dloss/dlogits)``."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if z.shape != y.shape:
        raise ValueError(f"bce_loss shape mismatch: {z.shape} vs {y.shape}")
    n = z.size
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return float(per.sum() / n), (sigmoid(z) - y) / n


def mse_loss(preds, targets):
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"mse_loss shape mismatch: {p.shape} vs {y.shape}")
    n = p.size
    diff = p - y
    return float((diff * diff).sum() / n), 2.0 * diff / n


@dataclass
class AdamWState:
    lr: float
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adamw_step(params, grads, state: AdamWState):
    """One decoupled-weight-decay Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"adamw shape mismatch: {p.shape}, {np.shape(g)}, {m.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if state.weight_decay:
            p *= 1.0 - state.lr * state.weight_decay
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def finite_diff_check(f, params, analytic_grad, h: float = 1e-5, max_coords: int | None = None,
                      rng=None) -> float:
    """Max relative error between ``analytic_grad`` and central differences of ``f``.

    ``params`` is perturbed in place and restored. With ``max_coords`` set,
    a random subsample of coordinates is checked.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    x = params
    g = np.asarray(analytic_grad, dtype=np.float64)
    if g.shape != x.shape:
        raise ValueError(f"gradient shape {g.shape} != parameter shape {x.shape}")
    coords = np.arange(x.size)
    if max_coords is not None and x.size > max_coords:
        rng = rng if rng is not None else np.random.default_rng(0)
        coords = rng.choice(x.size, size=max_coords, replace=False)
    flat = x.reshape(-1)
    worst = 0.0
    for c in coords:
        orig = flat[c]
        flat[c] = orig + h
        fp = f(x)
        flat[c] = orig - h
        fm = f(x)
        flat[c] = orig
        fd = (fp - fm) / (2.0 * h)
        an = g.reshape(-1)[c]
        err = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
        worst = max(worst, err)
    return worst

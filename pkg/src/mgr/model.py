"""GCN trunk over the cross-modal graph with pooled multi-asset heads.

``forward`` runs ``G_l = relu(A_norm @ G_{l-1} @ W_l)`` for every layer, pools
token rows (all rows when the variant has no tokens) and applies two linear
heads producing 24 movement logits and 24 volatility values, one per
(asset, horizon) in ``corpus.KEYS`` order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import KEYS, N_KEYS
from .errors import DimensionError, LoadError
from .numerics import bce_loss, matmul, mse_loss, relu, relu_backward, sigmoid

MAGIC_PARAMS = b"MGRP"


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 2
    dim: int = 768
    seed: int = 0


@dataclass(eq=False)
class ModelParams:
    gcn_weights: list
    movement_head: np.ndarray
    movement_bias: np.ndarray
    volatility_head: np.ndarray
    volatility_bias: np.ndarray
    config: ModelConfig
    # bumped on every optimiser step so stale forward caches can be detected
    version: int = 0

    def tensors(self) -> list:
        return [*self.gcn_weights, self.movement_head, self.movement_bias,
                self.volatility_head, self.volatility_bias]

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.gcn_weights], self.movement_head.copy(),
                           self.movement_bias.copy(), self.volatility_head.copy(),
                           self.volatility_bias.copy(), self.config, self.version)


@dataclass
class Gradients:
    gcn_weights: list
    movement_head: np.ndarray
    movement_bias: np.ndarray
    volatility_head: np.ndarray
    volatility_bias: np.ndarray

    def tensors(self) -> list:
        return [*self.gcn_weights, self.movement_head, self.movement_bias,
                self.volatility_head, self.volatility_bias]


@dataclass
class Prediction:
    movement_logits: np.ndarray
    volatility: np.ndarray
    movement_prob: np.ndarray = field(init=False)

    def __post_init__(self):
        self.movement_prob = sigmoid(self.movement_logits)

    def movement_map(self) -> dict:
        return dict(zip(KEYS, self.movement_prob.tolist()))

    def volatility_map(self) -> dict:
        return dict(zip(KEYS, self.volatility.tolist()))


@dataclass
class ForwardCache:
    params: ModelParams
    version: int
    norm_adjacency: object
    inputs: list  # G_{l-1} per layer
    propagated: list  # A_norm @ G_{l-1} per layer
    preact: list  # (A_norm @ G_{l-1}) @ W_l per layer
    pooled_rows: np.ndarray
    pooled: np.ndarray


def _glorot(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(config: ModelConfig) -> ModelParams:
    if config.layers < 1 or config.dim < 1:
        raise ValueError("layers and dim must be positive")
    rng = np.random.default_rng(config.seed)
    d = config.dim
    weights = [_glorot(rng, d, d) for _ in range(config.layers)]
    return ModelParams(weights, _glorot(rng, d, N_KEYS), np.zeros(N_KEYS),
                       _glorot(rng, d, N_KEYS), np.zeros(N_KEYS), config)


def forward(graph, params: ModelParams):
    """Returns ``(G_L, Prediction, cache)``."""
    h = graph.features
    if h.shape[1] != params.config.dim:
        raise DimensionError(f"graph features have {h.shape[1]} columns, model expects {params.config.dim}")
    adj = graph.norm_adjacency
    g = h
    inputs, propagated, preact = [], [], []
    for w in params.gcn_weights:
        inputs.append(g)
        ag = adj @ g
        z = matmul(ag, w)
        propagated.append(ag)
        preact.append(z)
        g = relu(z)
    rows = graph.token_rows()
    if rows.size == 0:
        rows = np.arange(graph.n_nodes)
    pooled = g[rows].mean(axis=0)
    logits = pooled @ params.movement_head + params.movement_bias
    vol = pooled @ params.volatility_head + params.volatility_bias
    cache = ForwardCache(params, params.version, adj, inputs, propagated, preact, rows, pooled)
    return g, Prediction(logits, vol), cache


def backward(cache: ForwardCache, movement_grad=None, volatility_grad=None) -> Gradients:
    """Reverse pass given d(loss)/d(movement logits) and d(loss)/d(volatility)."""
    p = cache.params
    if cache.version != p.version:
        raise RuntimeError("stale forward cache: parameters changed since forward()")
    dm = np.zeros(N_KEYS) if movement_grad is None else np.asarray(movement_grad, dtype=np.float64)
    dv = np.zeros(N_KEYS) if volatility_grad is None else np.asarray(volatility_grad, dtype=np.float64)
    g = cache.pooled
    d_pooled = p.movement_head @ dm + p.volatility_head @ dv
    n_nodes = cache.inputs[0].shape[0]
    dg = np.zeros((n_nodes, p.config.dim))
    dg[cache.pooled_rows] = d_pooled / cache.pooled_rows.size
    d_weights = [None] * len(p.gcn_weights)
    adj_t = cache.norm_adjacency.T
    for l in range(len(p.gcn_weights) - 1, -1, -1):
        dz = relu_backward(cache.preact[l], dg)
        d_weights[l] = cache.propagated[l].T @ dz
        if l:
            dg = adj_t @ (dz @ p.gcn_weights[l].T)
    return Gradients(d_weights, np.outer(g, dm), dm.copy(), np.outer(g, dv), dv.copy())


def movement_loss(pred: Prediction, labels):
    return bce_loss(pred.movement_logits, labels.movement)


def volatility_loss(pred: Prediction, labels):
    return mse_loss(pred.volatility, labels.volatility)


def task_loss(task: str, pred: Prediction, labels):
    """``(loss, movement_grad, volatility_grad)`` for one task."""
    if task == "movement":
        loss, grad = movement_loss(pred, labels)
        return loss, grad, None
    if task == "volatility":
        loss, grad = volatility_loss(pred, labels)
        return loss, None, grad
    raise ValueError(f"unknown task {task!r}")


# --- checkpoints -------------------------------------------------------------

def save_params(params: ModelParams, path) -> None:
    c = params.config
    with open(Path(path), "wb") as fh:
        fh.write(MAGIC_PARAMS + struct.pack("<IIq", c.layers, c.dim, c.seed))
        for t in params.tensors():
            fh.write(struct.pack("<I", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def load_params(path) -> ModelParams:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC_PARAMS:
        raise LoadError(f"{path}: not a parameter checkpoint")
    layers, dim, seed = struct.unpack_from("<IIq", data, 4)
    off = 4 + struct.calcsize("<IIq")
    tensors = []
    expected = [(dim, dim)] * layers + [(dim, N_KEYS), (N_KEYS,), (dim, N_KEYS), (N_KEYS,)]
    for shape in expected:
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        got = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        if tuple(got) != shape:
            raise LoadError(f"{path}: tensor shape {got} where {shape} expected")
        n = int(np.prod(shape))
        tensors.append(np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64))
        off += 8 * n
    if off != len(data):
        raise LoadError(f"{path}: trailing bytes")
    return ModelParams(tensors[:layers], *tensors[layers:], ModelConfig(layers, dim, seed))

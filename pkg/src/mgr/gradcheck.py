"""Random model instances and a full-model finite-difference check."""
from __future__ import annotations

import datetime as dt

import numpy as np

from .corpus import N_KEYS, HashEmbed, Labels, Sample
from .graph_builder import build_graph
from .kg_store import KnowledgeGraph, temporal_view
from .model import ModelConfig, backward, forward, init_params, task_loss
from .numerics import finite_diff_check

KINK_MARGIN = 1e-3
WORDS = ("rates", "gold", "bond", "yield", "growth", "dollar", "rose", "fell", "policy", "bank")


def random_instance(rng, dim: int = 8, max_nodes: int = 12):
    """A random sample/KG pair whose Full graph has at most ``max_nodes`` nodes."""
    while True:
        n_utt = int(rng.integers(1, 3))
        utts = [tuple(rng.choice(WORDS, size=int(rng.integers(1, 4)))) for _ in range(n_utt)]
        call = dt.date(2021, 1, 1) + dt.timedelta(days=int(rng.integers(0, 60)))
        rows = []
        for _ in range(int(rng.integers(0, 6))):
            h, t = rng.choice(WORDS, size=2)
            when = dt.date(2021, 1, 1) + dt.timedelta(days=int(rng.integers(-30, 90)))
            rows.append((str(h), str(rng.choice(["impact", "own", "raise"])), str(t), when))
        kg = KnowledgeGraph.from_records(rows)
        labels = Labels(rng.integers(0, 2, size=N_KEYS).astype(np.float64),
                        np.abs(rng.standard_normal(N_KEYS)))
        sample = Sample("rand", call, tuple(utts), rng.standard_normal((n_utt, dim)),
                        rng.standard_normal((n_utt, dim)), labels)
        graph = build_graph(sample, temporal_view(kg, call), HashEmbed(dim), cap=2)
        if graph.n_nodes <= max_nodes:
            return sample, kg, graph


def perturb_params(params, rng, scale: float = 0.5):
    """Random non-zero biases so the check exercises every tensor."""
    params.movement_bias[:] = rng.normal(0, scale, params.movement_bias.shape)
    params.volatility_bias[:] = rng.normal(0, scale, params.volatility_bias.shape)
    return params


def max_gradient_error(graph, params, labels, h: float = 1e-5) -> float:
    """Worst relative error over every parameter tensor and both task losses."""
    worst = 0.0
    for task in ("movement", "volatility"):
        _, pred, cache = forward(graph, params)
        _, dm, dv = task_loss(task, pred, labels)
        grads = backward(cache, dm, dv).tensors()

        def f(_, task=task):
            return task_loss(task, forward(graph, params)[1], labels)[0]

        for tensor, grad in zip(params.tensors(), grads):
            worst = max(worst, finite_diff_check(f, tensor, grad, h))
    return worst


def kink_distance(graph, params) -> float:
    """Smallest |pre-activation|; central differences are unreliable near 0."""
    _, _, cache = forward(graph, params)
    return min(float(np.abs(z).min()) for z in cache.preact)


def run(seed: int = 0, dim: int = 8, layers: int = 2, max_nodes: int = 12,
        margin: float = KINK_MARGIN) -> float:
    """Gradient check on a random instance drawn from ``seed``.

    Instances with a ReLU input within ``margin`` of zero are redrawn, since a
    step of ``h`` there crosses the kink and the finite difference is not a
    derivative.
    """
    rng = np.random.default_rng(seed)
    while True:
        sample, _, graph = random_instance(rng, dim, max_nodes)
        params = perturb_params(init_params(ModelConfig(layers, dim, int(rng.integers(2**31)))), rng)
        if kink_distance(graph, params) >= margin:
            return max_gradient_error(graph, params, sample.labels)

import datetime as dt
import math
import struct

import numpy as np
import pytest

from conftest import make_sample
from mgr.corpus import N_KEYS, HashEmbed
from mgr.errors import DimensionError, LoadError
from mgr.gradcheck import max_gradient_error, perturb_params
from mgr.graph_builder import Variant, build_graph
from mgr.kg_store import KnowledgeGraph, temporal_view
from mgr.model import (ModelConfig, backward, forward, init_params, load_params, movement_loss, save_params,
                       task_loss, volatility_loss)
from oracles import dense_forward


def _graph(dim=4, variant=Variant.Full, utts=(("gold", "rose"), ("bank",)), seed=0):
    kg = KnowledgeGraph.from_records([("gold", "impact", "dollar", dt.date(2020, 1, 1))])
    s = make_sample(utts, date=dt.date(2021, 1, 1), dim=dim, seed=seed)
    return s, build_graph(s, temporal_view(kg, s.call_date), HashEmbed(dim), variant)


def test_init_deterministic_and_bounded():
    a, b = init_params(ModelConfig(2, 8, 3)), init_params(ModelConfig(2, 8, 3))
    for x, y in zip(a.tensors(), b.tensors()):
        assert np.array_equal(x, y)
    bound = math.sqrt(6 / 16)
    assert all(np.abs(w).max() <= bound for w in a.gcn_weights)
    assert math.isclose(bound, 0.6124, abs_tol=1e-4)
    assert not a.movement_bias.any() and not a.volatility_bias.any()
    assert a.movement_head.shape == (8, N_KEYS)


def test_forward_identity_graph_is_relu():
    s, g = _graph(variant=Variant.WithoutGraph)
    p = init_params(ModelConfig(1, 4))
    p.gcn_weights[0] = np.eye(4)
    out, _, _ = forward(g, p)
    assert np.array_equal(out, np.maximum(g.features, 0))


def test_zero_features_give_half():
    s, g = _graph()
    object.__setattr__(g, "features", np.zeros_like(g.features))
    _, pred, _ = forward(g, init_params(ModelConfig(2, 4)))
    assert (pred.movement_prob == 0.5).all()


def test_forward_matches_dense_oracle():
    s, g = _graph()
    assert g.n_nodes == 3 + 2 + 2 * 2  # tokens, one knowledge pair, two utterances
    p = perturb_params(init_params(ModelConfig(2, 4, 5)), np.random.default_rng(0))
    out, pred, _ = forward(g, p)
    ref_g, ref_logits, ref_vol = dense_forward(g.features, g.adjacency.toarray(), p.gcn_weights, g.token_rows(),
                                               p.movement_head, p.movement_bias, p.volatility_head,
                                               p.volatility_bias)
    assert np.abs(out - ref_g).max() <= 1e-12
    assert np.abs(pred.movement_logits - ref_logits).max() <= 1e-12
    assert np.abs(pred.volatility - ref_vol).max() <= 1e-12


def test_readout_falls_back_to_all_rows():
    s, g = _graph(variant=Variant.WithoutText)
    assert g.token_rows().size == 0
    out, pred, _ = forward(g, init_params(ModelConfig(1, 4)))
    p = init_params(ModelConfig(1, 4))
    assert np.allclose(pred.volatility, out.mean(axis=0) @ p.volatility_head)


def test_backward_zero_upstream():
    _, g = _graph()
    _, _, cache = forward(g, init_params(ModelConfig(2, 4)))
    grads = backward(cache)
    assert all(not t.any() for t in grads.tensors())


@pytest.mark.parametrize("layers", [1, 2, 3])
def test_backward_matches_finite_differences(layers):
    s, g = _graph(dim=4, seed=layers)
    p = perturb_params(init_params(ModelConfig(layers, 4, 11)), np.random.default_rng(layers))
    assert max_gradient_error(g, p, s.labels) < 1e-4


def test_transpose_products_agree():
    _, g = _graph()
    rng = np.random.default_rng(0)
    x = rng.standard_normal((g.n_nodes, 4))
    dense = g.norm_adjacency.toarray()
    assert np.abs(g.norm_adjacency.T @ x - dense @ x).max() <= 1e-12


def test_stale_cache_rejected():
    _, g = _graph()
    p = init_params(ModelConfig(2, 4))
    _, pred, cache = forward(g, p)
    p.version += 1
    with pytest.raises(RuntimeError, match="stale"):
        backward(cache, np.ones(N_KEYS))


def test_dimension_mismatch():
    _, g = _graph(dim=4)
    with pytest.raises(DimensionError):
        forward(g, init_params(ModelConfig(2, 5)))


def test_losses():
    s, g = _graph()
    _, pred, _ = forward(g, init_params(ModelConfig(2, 4)))
    pred.movement_logits[:] = 0.0
    assert math.isclose(movement_loss(pred, s.labels)[0], math.log(2), rel_tol=1e-15)
    pred.volatility[:] = s.labels.volatility
    assert volatility_loss(pred, s.labels)[0] == 0.0
    loss, dm, dv = task_loss("volatility", pred, s.labels)
    assert dm is None and not dv.any()
    with pytest.raises(ValueError):
        task_loss("price", pred, s.labels)


def test_output_shape_independent_of_size():
    p = init_params(ModelConfig(2, 4))
    for utts in ([["a"]], [["gold", "rose", "x"], ["y", "z"], ["bank"]]):
        _, g = _graph(utts=utts)
        _, pred, _ = forward(g, p)
        assert pred.movement_logits.shape == (N_KEYS,) and pred.volatility.shape == (N_KEYS,)


def test_deterministic_forward():
    _, g = _graph()
    p = init_params(ModelConfig(2, 4))
    a, b = forward(g, p)[1], forward(g, p)[1]
    assert a.movement_logits.tobytes() == b.movement_logits.tobytes()


def test_positive_scaling_keeps_argmax():
    # with non-negative diagonal weights scaling the input scales every activation
    _, g = _graph()
    p = init_params(ModelConfig(2, 4))
    p.gcn_weights = [np.diag(np.abs(np.diag(w))) for w in p.gcn_weights]
    base = forward(g, p)[1].movement_logits
    object.__setattr__(g, "features", g.features * 3.0)
    scaled = forward(g, p)[1].movement_logits
    assert np.argmax(base) == np.argmax(scaled)
    assert np.allclose(scaled, 3.0 * base)


def test_checkpoint_roundtrip(tmp_path):
    p = perturb_params(init_params(ModelConfig(3, 4, 9)), np.random.default_rng(2))
    save_params(p, tmp_path / "m.mgrp")
    q = load_params(tmp_path / "m.mgrp")
    assert q.config == p.config
    for x, y in zip(p.tensors(), q.tensors()):
        assert x.tobytes() == y.tobytes()
    raw = (tmp_path / "m.mgrp").read_bytes()
    assert raw[:4] == b"MGRP" and struct.unpack_from("<IIq", raw, 4) == (3, 4, 9)
    (tmp_path / "bad").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(LoadError):
        load_params(tmp_path / "bad")

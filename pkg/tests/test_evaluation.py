import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_sample
from mgr.corpus import KEYS, SynthConfig, synth_generate
from mgr.errors import NumericalError
from mgr.evaluation import (TrainConfig, ablation_run, build_graphs, evaluate, f1_score, format_ablation,
                            format_report, metric_records, mse, read_metric_records, train, write_metric_records)
from mgr.graph_builder import Variant
from mgr.kg_store import KnowledgeGraph
from mgr.model import ModelConfig, init_params
from oracles import confusion_f1, loop_mse


@pytest.fixture(scope="module")
def tiny():
    samples, kg = synth_generate(SynthConfig(n_samples=8, dim=8, kg_size=40), seed=3)
    return samples, kg


def _cfg(**kw):
    return TrainConfig(**{"dim": 8, "epochs": 2, **kw})


def test_zero_epochs_returns_init(tiny):
    samples, kg = tiny
    params, hist = train(samples, kg, _cfg(epochs=0, seed=4))
    ref = init_params(ModelConfig(2, 8, 4))
    assert hist == []
    for a, b in zip(params.tensors(), ref.tensors()):
        assert np.array_equal(a, b)


def test_training_deterministic(tiny):
    samples, kg = tiny
    (a, ha), (b, hb) = train(samples, kg, _cfg()), train(samples, kg, _cfg())
    assert ha == hb
    for x, y in zip(a.tensors(), b.tensors()):
        assert x.tobytes() == y.tobytes()


def test_only_task_head_moves(tiny):
    samples, kg = tiny
    params, _ = train(samples, kg, _cfg(task="volatility"))
    ref = init_params(ModelConfig(2, 8, 0))
    assert np.array_equal(params.movement_head, ref.movement_head)
    assert not np.array_equal(params.volatility_head, ref.volatility_head)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(task="price")
    with pytest.raises(ValueError):
        TrainConfig(batch_size=4)
    assert TrainConfig(task="movement").lr_task == 1e-4
    assert TrainConfig(task="volatility").lr_task == 1e-3


def test_empty_dataset_rejected():
    with pytest.raises(ValueError, match="empty"):
        train([], KnowledgeGraph.from_records([]), _cfg())


@pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
def test_non_finite_loss_names_sample():
    bad = make_sample([["a"]], sid="boom", dim=8, volatility=[1e200] * 24)
    with pytest.raises(NumericalError, match="boom"):
        train([bad], KnowledgeGraph.from_records([]), _cfg(task="volatility", epochs=1))


def test_f1_hand_case():
    preds = [1, 1, 1, 0, 0]
    labels = [1, 1, 0, 1, 0]
    assert abs(f1_score(preds, labels) - 4 / 6) <= 1e-12


def test_f1_degenerate():
    assert f1_score([0, 0], [0, 0]) == 0.0
    assert f1_score([1, 1], [1, 1]) == 1.0
    with pytest.raises(ValueError):
        f1_score([1], [1, 0])
    with pytest.raises(ValueError):
        f1_score([], [])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=60))
def test_f1_matches_confusion_oracle(pairs):
    p, y = zip(*pairs)
    assert abs(f1_score(p, y) - confusion_f1(p, y)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(0, 1e3)), min_size=1, max_size=60))
def test_mse_matches_loop_oracle(pairs):
    p, y = zip(*pairs)
    assert mse(p, y) == loop_mse(p, y)


def test_evaluate_movement_perfect_when_confident(tiny):
    samples, kg = tiny
    ones = [make_sample([["a"]], sid=f"s{i}", dim=8, movement=[1] * 24) for i in range(3)]
    params = init_params(ModelConfig(2, 8))
    params.movement_bias[:] = 50.0
    rep = evaluate(params, ones, kg, _cfg())
    assert set(rep.f1) == set(KEYS) and all(v == 1.0 for v in rep.f1.values())


def test_evaluate_volatility_zero_predictions(tiny):
    _, kg = tiny
    data = [make_sample([["a"]], sid=f"s{i}", dim=8, volatility=[2.0] * 24) for i in range(3)]
    params = init_params(ModelConfig(2, 8))
    params.volatility_head[:] = 0.0
    rep = evaluate(params, data, kg, _cfg(task="volatility"))
    assert len(rep.mse) == 24 and all(v == 4.0 for v in rep.mse.values())


def test_parallel_prediction_matches_serial(tiny):
    samples, kg = tiny
    params = init_params(ModelConfig(2, 8))
    a = evaluate(params, samples, kg, _cfg(task="volatility"))
    b = evaluate(params, samples, kg, _cfg(task="volatility", jobs=3))
    assert a.mse == b.mse


def test_ablation_rows_and_identity(tiny):
    samples, kg = tiny
    res = ablation_run(samples, kg, _cfg(epochs=1))
    assert list(res) == list(Variant)
    assert all(len(r.f1) == 24 for r in res.values())
    g = build_graphs(samples[:1], kg, _cfg(variant=Variant.WithoutGraph))[0]
    assert np.array_equal(g.norm_adjacency.toarray(), np.eye(g.n_nodes))
    table = format_ablation(res)
    assert len(table.splitlines()) == 1 + len(Variant)


def test_records_roundtrip(tmp_path, tiny):
    samples, kg = tiny
    rep = evaluate(init_params(ModelConfig(2, 8)), samples, kg, _cfg())
    write_metric_records([rep], tmp_path / "m.jsonl")
    back = read_metric_records(tmp_path / "m.jsonl")
    assert back == {r["key"]: r["value"] for r in metric_records(rep)}
    assert "Full/movement/Gold/3" in back
    assert "Gold" in format_report(rep)


def test_select_best_uses_validation(tiny):
    samples, kg = tiny
    params, hist = train(samples[:6], kg, _cfg(epochs=3, select_best=True), validation=samples[6:])
    assert len(hist) == 3 and params.config.dim == 8


def test_cutoff_respected_in_training_graphs():
    kg = KnowledgeGraph.from_records([("gold", "impact", "dollar", dt.date(2022, 1, 1))])
    s = make_sample([["gold"]], dim=8, date=dt.date(2021, 1, 1))
    assert build_graphs([s], kg, _cfg())[0].pairs == ()

"""Training loop, F1/MSE metrics and the ablation driver."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .corpus import KEYS, HashEmbed
from .errors import NumericalError
from .graph_builder import Variant, build_graph
from .kg_store import temporal_view
from .model import ModelConfig, backward, forward, init_params, task_loss
from .numerics import AdamWState, adamw_step

log = logging.getLogger(__name__)

TASKS = ("movement", "volatility")
TASK_LR = {"movement": 1e-4, "volatility": 1e-3}


@dataclass
class TrainConfig:
    task: str = "movement"
    epochs: int = 10
    lr_gcn: float = 1e-3
    lr_task: float | None = None  # defaults per task
    batch_size: int = 1
    seed: int = 0
    variant: Variant = Variant.Full
    cap_per_anchor: int = 4
    dim: int = 768
    layers: int = 2
    weight_decay: float = 0.01
    select_best: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.lr_task is None:
            self.lr_task = TASK_LR[self.task]
        if self.epochs < 0 or self.lr_gcn <= 0 or self.lr_task <= 0:
            raise ValueError("epochs must be >= 0 and learning rates positive")
        if self.batch_size != 1:
            raise ValueError("only batch_size=1 is supported")


@dataclass
class MetricsReport:
    task: str
    variant: Variant
    f1: dict = field(default_factory=dict)
    mse: dict = field(default_factory=dict)
    loss_history: list = field(default_factory=list)

    def values(self) -> dict:
        return self.f1 if self.task == "movement" else self.mse

    def mean(self) -> float:
        vals = list(self.values().values())
        return float(np.mean(vals)) if vals else float("nan")


def f1_score(preds, labels) -> float:
    preds = np.asarray(preds).astype(int)
    labels = np.asarray(labels).astype(int)
    if preds.shape != labels.shape:
        raise ValueError(f"f1_score length mismatch: {preds.shape} vs {labels.shape}")
    if preds.size == 0:
        raise ValueError("f1_score needs at least one element")
    tp = int(np.sum((preds == 1) & (labels == 1)))
    fp = int(np.sum((preds == 1) & (labels == 0)))
    fn = int(np.sum((preds == 0) & (labels == 1)))
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2 * tp / denom


def mse(preds, labels) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape:
        raise ValueError(f"mse length mismatch: {preds.shape} vs {labels.shape}")
    if preds.size == 0:
        raise ValueError("mse needs at least one element")
    # correctly rounded sum, so the result does not depend on summation order
    diff = preds - labels
    return math.fsum((diff * diff).tolist()) / preds.size


def build_graphs(dataset, kg, config: TrainConfig, provider=None):
    provider = provider or HashEmbed(config.dim)
    return [build_graph(s, temporal_view(kg, s.call_date), provider, config.variant, config.cap_per_anchor)
            for s in dataset]


def _mean_loss(params, graphs, dataset, task):
    total = 0.0
    for g, s in zip(graphs, dataset):
        _, pred, _ = forward(g, params)
        total += task_loss(task, pred, s.labels)[0]
    return total / len(dataset)


def train(dataset, kg, config: TrainConfig, provider=None, validation=None, graphs=None):
    """Per-sample AdamW training; returns ``(params, per-epoch mean loss)``.

    GCN weights and the task head form two parameter groups with their own
    learning rates. With ``select_best`` and a validation set, the parameters
    from the epoch with the lowest validation loss are returned.
    """
    if not dataset:
        raise ValueError("cannot train on an empty dataset")
    graphs = graphs if graphs is not None else build_graphs(dataset, kg, config, provider)
    val_graphs = build_graphs(validation, kg, config, provider) if validation else None
    params = init_params(ModelConfig(config.layers, config.dim, config.seed))
    n_gcn = len(params.gcn_weights)
    head = slice(n_gcn, n_gcn + 2) if config.task == "movement" else slice(n_gcn + 2, n_gcn + 4)
    gcn_opt = AdamWState(config.lr_gcn, config.weight_decay)
    head_opt = AdamWState(config.lr_task, config.weight_decay)
    rng = np.random.default_rng(config.seed)
    history = []
    best = (math.inf, None)
    for epoch in range(config.epochs):
        total = 0.0
        for idx in rng.permutation(len(dataset)):
            sample = dataset[idx]
            _, pred, cache = forward(graphs[idx], params)
            loss, dm, dv = task_loss(config.task, pred, sample.labels)
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite loss {loss} on sample {sample.id} (epoch {epoch})")
            grads = backward(cache, dm, dv).tensors()
            adamw_step(params.tensors()[:n_gcn], grads[:n_gcn], gcn_opt)
            adamw_step(params.tensors()[head], grads[head], head_opt)
            params.version += 1
            total += loss
        history.append(total / len(dataset))
        log.info("epoch %d %s loss %.6f", epoch, config.task, history[-1])
        if config.select_best and val_graphs:
            val = _mean_loss(params, val_graphs, validation, config.task)
            if val < best[0]:
                best = (val, params.copy())
    if config.select_best and best[1] is not None:
        params = best[1]
    return params, history


def predict_all(params, graphs, jobs: int = 1):
    def one(g):
        return forward(g, params)[1]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, graphs))
    return [one(g) for g in graphs]


def evaluate(params, dataset, kg, config: TrainConfig, provider=None, graphs=None) -> MetricsReport:
    if not dataset:
        raise ValueError("cannot evaluate an empty dataset")
    graphs = graphs if graphs is not None else build_graphs(dataset, kg, config, provider)
    preds = predict_all(params, graphs, config.jobs)
    report = MetricsReport(config.task, config.variant)
    if config.task == "movement":
        yhat = np.array([p.movement_prob >= 0.5 for p in preds], dtype=int)
        y = np.array([s.labels.movement for s in dataset], dtype=int)
        report.f1 = {k: f1_score(yhat[:, i], y[:, i]) for i, k in enumerate(KEYS)}
    else:
        yhat = np.array([p.volatility for p in preds])
        y = np.array([s.labels.volatility for s in dataset])
        report.mse = {k: mse(yhat[:, i], y[:, i]) for i, k in enumerate(KEYS)}
    return report


def ablation_run(dataset, kg, base_config: TrainConfig, test=None, variants=None, provider=None) -> dict:
    """Train and evaluate each variant with the same seed and budget."""
    results = {}
    for variant in variants or list(Variant):
        cfg = replace(base_config, variant=variant)
        params, history = train(dataset, kg, cfg, provider)
        report = evaluate(params, test if test is not None else dataset, kg, cfg, provider)
        report.loss_history = history
        results[variant] = report
    return results


# --- reports -----------------------------------------------------------------

def metric_records(report: MetricsReport) -> list[dict]:
    metric = "f1" if report.task == "movement" else "mse"
    return [{"key": f"{report.variant.name}/{report.task}/{a.name}/{int(h)}", "metric": metric, "value": v}
            for (a, h), v in report.values().items()]


def write_metric_records(reports, path) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        for report in reports:
            for rec in metric_records(report):
                fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_metric_records(path) -> dict:
    out = {}
    with open(Path(path), encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[rec["key"]] = rec["value"]
    return out


def format_report(report: MetricsReport) -> str:
    metric = "F1" if report.task == "movement" else "MSE"
    lines = [f"{report.variant.name} / {report.task} ({metric})",
             f"{'asset':<34}" + "".join(f"{'tau=' + str(int(h)):>10}" for h in sorted({h for _, h in KEYS}))]
    vals = report.values()
    assets = []
    for a, _ in KEYS:
        if a not in assets:
            assets.append(a)
    for a in assets:
        row = [vals[(b, h)] for b, h in KEYS if b is a]
        lines.append(f"{a.display:<34}" + "".join(f"{v:>10.4f}" for v in row))
    lines.append(f"{'mean':<34}{report.mean():>10.4f}")
    if report.loss_history:
        lines.append(f"final train loss {report.loss_history[-1]:.6f} after {len(report.loss_history)} epochs")
    return "\n".join(lines) + "\n"


def format_ablation(results: dict) -> str:
    lines = [f"{'variant':<18}{'task':<12}{'mean':>10}"]
    for variant, rep in results.items():
        lines.append(f"{variant.name:<18}{rep.task:<12}{rep.mean():>10.4f}")
    return "\n".join(lines) + "\n"

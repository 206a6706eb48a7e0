"""``mgr`` command line: ingest, synth, build-graph, train, evaluate, ablate,
export-instructions, gradcheck.

Exit codes: 0 ok, 1 usage error, 2 data/validation error, 3 numerical abort.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import gradcheck
from .corpus import (DEFAULT_DIM, DEFAULT_MAX_TOKENS, FileBacked, HashEmbed, SynthConfig, load_dataset,
                     save_dataset, synth_generate)
from .errors import DataError, NumericalError
from .evaluation import (TrainConfig, ablation_run, evaluate, format_ablation, format_report, train,
                         write_metric_records)
from .graph_builder import Variant, build_graph, dump_graph
from .instruct_export import export_jsonl
from .kg_store import link_entities, load_kg, save_kg, temporal_view
from .model import load_params, save_params

log = logging.getLogger("mgr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _paths(p):
    p.add_argument("--data-dir", default="mgr_data", help="directory holding transcripts.jsonl and kg.tsv")
    p.add_argument("--transcripts", help="transcript records (default: <data-dir>/transcripts.jsonl)")
    p.add_argument("--kg", help="knowledge graph TSV (default: <data-dir>/kg.tsv)")
    p.add_argument("--features", help="MGRF feature archive for video/audio rows")
    p.add_argument("--text-features", help="MGRF archive with txt/<text> rows replacing hash embeddings")
    p.add_argument("--max-tokens", type=int, default=DEFAULT_MAX_TOKENS)


def _model(p, epochs=True):
    p.add_argument("--task", choices=("movement", "volatility"), default="movement")
    p.add_argument("--variant", default="Full", help="one of: " + ", ".join(v.name for v in Variant))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d", type=int, default=DEFAULT_DIM, help="feature/model width")
    p.add_argument("--l", type=int, default=2, help="number of GCN layers")
    p.add_argument("--cap", type=int, default=4, help="knowledge pairs per anchor")
    p.add_argument("--jobs", type=int, default=1)
    if epochs:
        p.add_argument("--epochs", type=int, default=10)
        p.add_argument("--lr-gcn", type=float, default=1e-3)
        p.add_argument("--lr-task", type=float, default=None, help="default 1e-4 movement, 1e-3 volatility")
        p.add_argument("--weight-decay", type=float, default=0.01)


def build_parser() -> _Parser:
    parser = _Parser(prog="mgr", description="Knowledge-enhanced cross-modal GCN for MPC-call prediction")
    parser.add_argument("--config", help="key = value file mirroring the flags (flags win)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="validate transcripts, features and KG; print a summary")
    _paths(p)
    p.add_argument("--d", type=int, default=DEFAULT_DIM)

    p = sub.add_parser("synth", help="write a synthetic dataset and KG")
    p.add_argument("--out-dir", "--data-dir", dest="data_dir", default="mgr_data")
    p.add_argument("--n", type=int, default=200, help="number of samples")
    p.add_argument("--utterances", type=int, default=2)
    p.add_argument("--tokens", type=int, default=4, help="filler tokens per utterance")
    p.add_argument("--kg-size", type=int, default=2000)
    p.add_argument("--d", type=int, default=DEFAULT_DIM)
    p.add_argument("--plant-knowledge", action="store_true", help="labels follow the planted KG signal")
    p.add_argument("--test-fraction", type=float, default=0.0,
                   help="also write this share of samples to test.jsonl")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("build-graph", help="dump one sample's cross-modal graph")
    _paths(p)
    _model(p, epochs=False)
    p.add_argument("--sample-id", help="default: first sample")
    p.add_argument("--out", help="output file (default stdout)")

    p = sub.add_parser("train", help="train one task and save a checkpoint")
    _paths(p)
    _model(p)
    p.add_argument("--checkpoint", help="default: <data-dir>/model-<task>.mgrp")
    p.add_argument("--validation", help="validation transcripts for --select-best")
    p.add_argument("--select-best", action="store_true", help="keep the epoch with lowest validation loss")
    p.add_argument("--metrics-out", help="train-set metric records (default: <data-dir>/train-metrics-<task>.jsonl)")

    p = sub.add_parser("evaluate", help="evaluate a checkpoint")
    _paths(p)
    _model(p, epochs=False)
    p.add_argument("--checkpoint", help="default: <data-dir>/model-<task>.mgrp")
    p.add_argument("--metrics-out", help="default: <data-dir>/metrics-<task>.jsonl")
    p.add_argument("--report", help="text report path (default stdout)")

    p = sub.add_parser("ablate", help="train and evaluate every variant")
    _paths(p)
    _model(p)
    p.add_argument("--test-transcripts", help="held-out transcripts (default: the training set)")
    p.add_argument("--variants", default=",".join(v.name for v in Variant))
    p.add_argument("--metrics-out", help="default: <data-dir>/ablation-<task>.jsonl")
    p.add_argument("--report", help="text report path (default stdout)")

    p = sub.add_parser("export-instructions", help="write instruction-tuning records")
    _paths(p)
    p.add_argument("--task", choices=("movement", "volatility"), default="movement")
    p.add_argument("--cap", type=int, default=4)
    p.add_argument("--d", type=int, default=DEFAULT_DIM)
    p.add_argument("--no-knowledge", action="store_true", help="omit retrieved knowledge from the input")
    p.add_argument("--out", help="default: <data-dir>/instructions-<task>.jsonl")

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--l", type=int, default=2)
    p.add_argument("--nodes", type=int, default=10, help="maximum graph size")
    return parser


def read_config(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            out[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return out


def _apply_config(parser, argv):
    """Re-parse with config-file values as defaults so explicit flags win."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    conf = read_config(args.config)
    subparser = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[args.command]
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in conf.items():
        if key not in actions:
            raise UsageError(f"{args.config}: unknown key {key!r} for {args.command}")
        act = actions[key]
        if isinstance(act, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            defaults[key] = act.type(raw) if act.type else raw
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _path(args, name, default):
    val = getattr(args, name, None)
    return Path(val) if val else Path(args.data_dir) / default


def _load(args, transcripts=None):
    kg = load_kg(_path(args, "kg", "kg.tsv"))
    data = load_dataset(transcripts or _path(args, "transcripts", "transcripts.jsonl"),
                        args.features, dim=args.d, max_tokens=args.max_tokens)
    return data, kg


def _provider(args, data):
    if getattr(args, "text_features", None):
        return FileBacked.open(args.text_features)
    dim = data[0].dim if data else args.d
    return HashEmbed(dim)


def _train_config(args, data) -> TrainConfig:
    try:
        variant = Variant.parse(args.variant)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    dim = data[0].dim if data else args.d
    kw = dict(task=args.task, seed=args.seed, variant=variant, cap_per_anchor=args.cap, dim=dim,
              layers=args.l, jobs=args.jobs)
    if hasattr(args, "epochs"):
        kw.update(epochs=args.epochs, lr_gcn=args.lr_gcn, lr_task=args.lr_task, weight_decay=args.weight_decay)
    return TrainConfig(**kw)


def cmd_ingest(args):
    data, kg = _load(args)
    tokens = sum(s.n_tokens for s in data)
    linked = 0
    for s in data:
        linked += len(link_entities(temporal_view(kg, s.call_date), s.tokens))
    print(f"samples {len(data)}  tokens {tokens}  dim {data[0].dim if data else args.d}")
    print(f"kg entities {len(kg.entities)}  relations {len(kg.relations)}  triples {len(kg.triples)}")
    print(f"anchor mentions {linked}")
    return EXIT_OK


def cmd_synth(args):
    cfg = SynthConfig(n_samples=args.n, n_utterances=args.utterances, dim=args.d, kg_size=args.kg_size,
                      plant_knowledge_signal=args.plant_knowledge, tokens_per_utterance=args.tokens)
    samples, kg = synth_generate(cfg, args.seed)
    out = Path(args.data_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_test = int(round(len(samples) * args.test_fraction))
    train_set = samples[: len(samples) - n_test]
    save_dataset(train_set, out / "transcripts.jsonl")
    if n_test:
        save_dataset(samples[len(samples) - n_test:], out / "test.jsonl")
    save_kg(kg, out / "kg.tsv")
    print(f"wrote {len(train_set)} train / {n_test} test samples and {len(kg.triples)} triples to {out}")
    return EXIT_OK


def cmd_build_graph(args):
    data, kg = _load(args)
    cfg = _train_config(args, data)
    sample = data[0] if args.sample_id is None else next((s for s in data if s.id == args.sample_id), None)
    if sample is None:
        raise DataError(f"no sample with id {args.sample_id!r}")
    graph = build_graph(sample, temporal_view(kg, sample.call_date), _provider(args, data), cfg.variant, cfg.cap_per_anchor)
    text = dump_graph(graph, kg)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_train(args):
    data, kg = _load(args)
    cfg = _train_config(args, data)
    validation = None
    if args.validation:
        validation = load_dataset(args.validation, args.features, dim=cfg.dim, max_tokens=args.max_tokens)
    cfg.select_best = args.select_best
    provider = _provider(args, data)
    params, history = train(data, kg, cfg, provider, validation=validation)
    ckpt = _path(args, "checkpoint", f"model-{cfg.task}.mgrp")
    save_params(params, ckpt)
    report = evaluate(params, data, kg, cfg, provider)
    report.loss_history = history
    write_metric_records([report], _path(args, "metrics_out", f"train-metrics-{cfg.task}.jsonl"))
    sys.stdout.write(format_report(report))
    name = "F1" if cfg.task == "movement" else "MSE"
    print(f"train {name} {report.mean():.4f}")
    print(f"checkpoint {ckpt}")
    return EXIT_OK


def cmd_evaluate(args):
    data, kg = _load(args)
    cfg = _train_config(args, data)
    params = load_params(_path(args, "checkpoint", f"model-{cfg.task}.mgrp"))
    if params.config.dim != cfg.dim:
        raise DataError(f"checkpoint width {params.config.dim} does not match feature width {cfg.dim}")
    report = evaluate(params, data, kg, cfg, _provider(args, data))
    write_metric_records([report], _path(args, "metrics_out", f"metrics-{cfg.task}.jsonl"))
    text = format_report(report)
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_ablate(args):
    data, kg = _load(args)
    test = None
    if args.test_transcripts:
        test = load_dataset(args.test_transcripts, args.features, dim=args.d, max_tokens=args.max_tokens)
    cfg = _train_config(args, data)
    try:
        variants = [Variant.parse(v.strip()) for v in args.variants.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    results = ablation_run(data, kg, cfg, test=test, variants=variants, provider=_provider(args, data))
    write_metric_records(results.values(), _path(args, "metrics_out", f"ablation-{cfg.task}.jsonl"))
    text = format_ablation(results) + "\n" + "\n".join(format_report(r) for r in results.values())
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_export(args):
    data, kg = _load(args)
    out = _path(args, "out", f"instructions-{args.task}.jsonl")
    n = export_jsonl(data, args.task, out, None if args.no_knowledge else kg, args.cap)
    print(f"wrote {n} records to {out}")
    return EXIT_OK


def cmd_gradcheck(args):
    err = gradcheck.run(args.seed, args.d, args.l, args.nodes)
    ok = err < GRADCHECK_TOL
    print(f"max relative error {err:.3e} ({'ok' if ok else 'FAILED'}, tolerance {GRADCHECK_TOL:.0e})")
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {
    "ingest": cmd_ingest, "synth": cmd_synth, "build-graph": cmd_build_graph, "train": cmd_train,
    "evaluate": cmd_evaluate, "ablate": cmd_ablate, "export-instructions": cmd_export,
    "gradcheck": cmd_gradcheck,
}


def run(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("MGR_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()

"""Instruction-tuning records for downstream LLM fine-tuning."""
from __future__ import annotations

import datetime as dt
import json
import re
from pathlib import Path
from typing import NamedTuple

from .corpus import KEYS, Asset, Horizon
from .kg_store import link_entities, retrieve_knowledge, temporal_view

TASK_PHRASE = {"movement": "price movement", "volatility": "volatility"}
_PHRASE_TASK = {v: k for k, v in TASK_PHRASE.items()}
_DISPLAY_ASSET = {a.display: a for a in Asset}

_PROMPT_RE = re.compile(
    r"^Please predict the (?P<phrase>price movement|volatility) of (?P<asset>.+) "
    r"in (?P<tau>\d+) days after the (?P<date>\d{4}-\d{2}-\d{2}) according to the input$")


class InstructionRecord(NamedTuple):
    task: str
    asset: Asset
    tau: Horizon
    date: dt.date
    answer: str
    sample_id: str
    input: str


def render_prompt(task: str, asset: Asset, tau: Horizon | int, date) -> str:
    if isinstance(date, dt.date):
        date = date.isoformat()
    else:
        date = dt.date.fromisoformat(date).isoformat()
    return (f"Please predict the {TASK_PHRASE[task]} of {asset.display} "
            f"in {int(Horizon(tau))} days after the {date} according to the input")


def render_answer(task: str, value) -> str:
    if task == "movement":
        return "increase" if int(value) == 1 else "decrease"
    return f"{float(value):.6f}"


def render_input(sample, kg=None, cap: int = 4) -> str:
    text = "\n".join(" ".join(u) for u in sample.utterances)
    if kg is None:
        return text
    view = temporal_view(kg, sample.call_date)
    pairs = retrieve_knowledge(view, link_entities(view, sample.tokens), cap)
    if not pairs:
        return text
    lines = [f"({kg.entity(p.anchor)}, {kg.relation(p.relation)}, {kg.entity(p.neighbor)})" for p in pairs]
    return text + "\nKnowledge:\n" + "\n".join(lines)


def export_jsonl(dataset, task: str, out_path, kg=None, cap: int = 4, pooled=None) -> int:
    """Write one record per (sample, asset, horizon); returns the record count.

    ``pooled`` optionally maps sample id to a vector stored in a ``pooled``
    sidecar field.
    """
    if task not in TASK_PHRASE:
        raise ValueError(f"unknown task {task!r}")
    count = 0
    with open(Path(out_path), "w", encoding="utf-8") as fh:
        for sample in dataset:
            text = render_input(sample, kg, cap)
            labels = sample.labels.movement if task == "movement" else sample.labels.volatility
            for (asset, tau), value in zip(KEYS, labels):
                rec = {
                    "instruction": render_prompt(task, asset, tau, sample.call_date),
                    "input": text,
                    "answer": render_answer(task, value),
                    "meta": {"sample_id": sample.id, "asset": asset.name, "tau": int(tau),
                             "date": sample.call_date.isoformat(), "task": task},
                }
                if pooled is not None and sample.id in pooled:
                    rec["pooled"] = [float(x) for x in pooled[sample.id]]
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
                count += 1
    return count


def parse_instruction(instruction: str):
    m = _PROMPT_RE.match(instruction)
    if m is None:
        raise ValueError(f"not an instruction prompt: {instruction!r}")
    asset = _DISPLAY_ASSET.get(m["asset"])
    if asset is None:
        raise ValueError(f"unknown asset {m['asset']!r}")
    return _PHRASE_TASK[m["phrase"]], asset, Horizon(int(m["tau"])), dt.date.fromisoformat(m["date"])


def parse_jsonl(path) -> list[InstructionRecord]:
    """Read an exported file back, cross-checking the prompt against ``meta``."""
    out = []
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            rec = json.loads(line)
            task, asset, tau, date = parse_instruction(rec["instruction"])
            meta = rec["meta"]
            if (meta["task"], meta["asset"], meta["tau"], meta["date"]) != (
                    task, asset.name, int(tau), date.isoformat()):
                raise ValueError(f"{path}:{lineno}: meta disagrees with the instruction text")
            answer = rec["answer"]
            if task == "movement" and answer not in ("increase", "decrease"):
                raise ValueError(f"{path}:{lineno}: bad movement answer {answer!r}")
            if task == "volatility":
                float(answer)
            out.append(InstructionRecord(task, asset, tau, date, answer, meta["sample_id"], rec["input"]))
    return out

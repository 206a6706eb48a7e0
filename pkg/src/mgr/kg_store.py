"""Timestamped financial knowledge graph with leak-free temporal views.

The graph is loaded once from a tab-separated export and is immutable
afterwards. A :class:`KnowledgeView` exposes only facts dated strictly before
its cutoff, and all linking/retrieval goes through a view so that a sample can
never see knowledge from its own call date or later.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

from .errors import ParseError

OUTGOING = "outgoing"
INCOMING = "incoming"


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int
    timestamp: dt.date


class AnchorMatch(NamedTuple):
    entity: int
    start: int
    end: int  # exclusive

    @property
    def span(self) -> range:
        return range(self.start, self.end)


class KnowledgePair(NamedTuple):
    anchor: int
    relation: int
    neighbor: int
    direction: str
    # bookkeeping used by the graph builder and the leak checks
    anchor_index: int
    triple_index: int
    timestamp: dt.date


def _surface_key(surface: str) -> tuple[str, ...]:
    return tuple(surface.lower().split())


@dataclass
class KnowledgeGraph:
    entities: list[str] = field(default_factory=list)
    relations: list[str] = field(default_factory=list)
    triples: list[Triple] = field(default_factory=list)

    def __post_init__(self):
        self.entity_ids = {s: i for i, s in enumerate(self.entities)}
        self.relation_ids = {s: i for i, s in enumerate(self.relations)}
        self.by_head: dict[int, list[int]] = {}
        self.by_tail: dict[int, list[int]] = {}
        self.earliest: dict[int, dt.date] = {}
        for idx, t in enumerate(self.triples):
            if not (0 <= t.head < len(self.entities) and 0 <= t.tail < len(self.entities)):
                raise ValueError(f"triple {idx} references an unknown entity")
            if not 0 <= t.relation < len(self.relations):
                raise ValueError(f"triple {idx} references an unknown relation")
            self.by_head.setdefault(t.head, []).append(idx)
            if t.tail != t.head:
                self.by_tail.setdefault(t.tail, []).append(idx)
            for e in (t.head, t.tail):
                if e not in self.earliest or t.timestamp < self.earliest[e]:
                    self.earliest[e] = t.timestamp
        # lowercased token tuple -> entity ids in id order
        self.surface_index: dict[tuple[str, ...], list[int]] = {}
        self.max_surface_len = 0
        for i, s in enumerate(self.entities):
            if not s.strip():
                raise ValueError(f"entity {i} has an empty surface form")
            key = _surface_key(s)
            self.surface_index.setdefault(key, []).append(i)
            self.max_surface_len = max(self.max_surface_len, len(key))

    @classmethod
    def from_records(cls, rows) -> "KnowledgeGraph":
        """Build from ``(head, relation, tail, date)`` string/date rows.

        Ids are assigned in first-appearance order and exact duplicates dropped.
        """
        entities: dict[str, int] = {}
        relations: dict[str, int] = {}
        seen: set[Triple] = set()
        triples: list[Triple] = []
        for head, rel, tail, when in rows:
            h = entities.setdefault(head, len(entities))
            r = relations.setdefault(rel, len(relations))
            t = entities.setdefault(tail, len(entities))
            triple = Triple(h, r, t, when)
            if triple in seen:
                continue
            seen.add(triple)
            triples.append(triple)
        return cls(list(entities), list(relations), triples)

    def entity(self, idx: int) -> str:
        return self.entities[idx]

    def relation(self, idx: int) -> str:
        return self.relations[idx]

    def __len__(self) -> int:
        return len(self.triples)


def load_kg(path) -> KnowledgeGraph:
    """Parse a ``head<TAB>relation<TAB>tail<TAB>YYYY-MM-DD`` file.

    Blank lines and lines starting with ``#`` are skipped.
    """
    rows = []
    with open(Path(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 tab-separated columns, got {len(cols)}")
            head, rel, tail, stamp = (c.strip() for c in cols)
            if not head or not rel or not tail:
                raise ParseError(f"{path}:{lineno}: empty head, relation or tail")
            try:
                when = dt.date.fromisoformat(stamp)
            except ValueError:
                raise ParseError(f"{path}:{lineno}: unparsable date {stamp!r}") from None
            rows.append((head, rel, tail, when))
    return KnowledgeGraph.from_records(rows)


def save_kg(kg: KnowledgeGraph, path) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        for t in kg.triples:
            fh.write(f"{kg.entities[t.head]}\t{kg.relations[t.relation]}\t"
                     f"{kg.entities[t.tail]}\t{t.timestamp.isoformat()}\n")


@dataclass(frozen=True)
class KnowledgeView:
    parent: KnowledgeGraph
    cutoff: dt.date

    def visible(self, idx: int) -> bool:
        return self.parent.triples[idx].timestamp < self.cutoff

    def triples(self) -> Iterator[Triple]:
        for t in self.parent.triples:
            if t.timestamp < self.cutoff:
                yield t

    def is_linkable(self, entity: int) -> bool:
        first = self.parent.earliest.get(entity)
        return first is not None and first < self.cutoff

    def incident(self, entity: int) -> list[int]:
        """Visible triple indices touching ``entity``, in load order."""
        idx = self.parent.by_head.get(entity, []) + self.parent.by_tail.get(entity, [])
        return sorted(i for i in idx if self.visible(i))


def temporal_view(kg: KnowledgeGraph, cutoff: dt.date) -> KnowledgeView:
    return KnowledgeView(kg, cutoff)


def _linkable_for(view: KnowledgeView, key: tuple[str, ...]) -> int | None:
    for ent in view.parent.surface_index.get(key, ()):
        if view.is_linkable(ent):
            return ent
    return None


def link_entities(view: KnowledgeView, tokens) -> list[AnchorMatch]:
    """Leftmost-longest, non-overlapping, case-insensitive entity matching."""
    low = [tok.lower() for tok in tokens]
    n = len(low)
    longest = view.parent.max_surface_len
    matches = []
    i = 0
    while i < n:
        hit = None
        for length in range(min(longest, n - i), 0, -1):
            ent = _linkable_for(view, tuple(low[i:i + length]))
            if ent is not None:
                hit = AnchorMatch(ent, i, i + length)
                break
        if hit is None:
            i += 1
        else:
            matches.append(hit)
            i = hit.end
    return matches


def retrieve_knowledge(view: KnowledgeView, anchors, cap_per_anchor: int = 4) -> list[KnowledgePair]:
    """One-hop pairs per anchor, newest first, at most ``cap_per_anchor`` each."""
    if cap_per_anchor < 1:
        raise ValueError("cap_per_anchor must be positive")
    kg = view.parent
    pairs = []
    for a_idx, anchor in enumerate(anchors):
        hits = view.incident(anchor.entity)
        hits.sort(key=lambda i: (-kg.triples[i].timestamp.toordinal(), i))
        for i in hits[:cap_per_anchor]:
            t = kg.triples[i]
            if t.head == anchor.entity:
                pairs.append(KnowledgePair(anchor.entity, t.relation, t.tail, OUTGOING, a_idx, i, t.timestamp))
            else:
                pairs.append(KnowledgePair(anchor.entity, t.relation, t.head, INCOMING, a_idx, i, t.timestamp))
    return pairs

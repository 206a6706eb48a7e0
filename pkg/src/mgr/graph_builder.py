"""Knowledge-enhanced cross-modal graph construction.

Node order is tokens (flattened transcript order), then a relation node and an
entity node per knowledge pair, then one video node and one audio node per
utterance. Edges are undirected with weight 1; self-loops are added before
the symmetric normalisation.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .corpus import Sample
from .errors import DimensionError
from .kg_store import (AnchorMatch, KnowledgePair, KnowledgeView, link_entities,
                       retrieve_knowledge)

TOKEN, KNOW_REL, KNOW_ENT, VIDEO, AUDIO = "Token", "KnowRel", "KnowEnt", "Video", "Audio"

INTRA_FAMILIES = ("token-token", "token-knowledge", "knowledge-knowledge", "video-video", "audio-audio")
INTER_FAMILIES = ("token-video", "token-audio")


class Node(NamedTuple):
    kind: str
    a: int  # utterance index for Token/Video/Audio, pair index for knowledge nodes
    b: int = -1  # token index within the utterance

    def __str__(self):
        return f"{self.kind}({self.a})" if self.b < 0 else f"{self.kind}({self.a},{self.b})"


class Edge(NamedTuple):
    i: int
    j: int
    family: str


class Variant(enum.Enum):
    Full = "full"
    WithoutText = "wo-text"
    WithoutKnowledge = "wo-knowledge"
    WithoutVideo = "wo-video"
    WithoutAudio = "wo-audio"
    WithoutGraph = "wo-graph"
    FullGraph = "full-graph"

    @classmethod
    def parse(cls, name: str) -> "Variant":
        for v in cls:
            if name in (v.name, v.value):
                return v
        raise ValueError(f"unknown variant {name!r}")


@dataclass(frozen=True, eq=False)
class CrossModalGraph:
    nodes: tuple[Node, ...]
    features: np.ndarray
    edges: tuple[Edge, ...]
    adjacency: sp.csr_matrix
    norm_adjacency: sp.csr_matrix
    pairs: tuple[KnowledgePair, ...] = ()
    anchors: tuple[AnchorMatch, ...] = ()
    variant: Variant = Variant.Full
    sample_id: str = ""

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def token_rows(self) -> np.ndarray:
        return np.array([i for i, n in enumerate(self.nodes) if n.kind == TOKEN], dtype=np.intp)

    def count(self, kind: str) -> int:
        return sum(1 for n in self.nodes if n.kind == kind)


def _token_index(sample: Sample):
    """Flattened position -> (utterance, token) and the inverse per utterance."""
    flat = []
    for u, utt in enumerate(sample.utterances):
        flat.extend((u, t) for t in range(len(utt)))
    return flat


def assemble_nodes(sample: Sample, pairs, provider, kg=None):
    if provider.dim != sample.dim:
        raise DimensionError(f"sample {sample.id}: provider dim {provider.dim} != feature dim {sample.dim}")
    nodes = [Node(TOKEN, u, t) for u, t in _token_index(sample)]
    rows = [provider.embed(tok) for tok in sample.tokens]
    for k, p in enumerate(pairs):
        nodes += [Node(KNOW_REL, k), Node(KNOW_ENT, k)]
        rel = kg.relation(p.relation) if kg is not None else str(p.relation)
        ent = kg.entity(p.neighbor) if kg is not None else str(p.neighbor)
        rows += [provider.embed(rel), provider.embed(ent)]
    n = len(sample.utterances)
    nodes += [Node(VIDEO, j) for j in range(n)]
    nodes += [Node(AUDIO, j) for j in range(n)]
    d = sample.dim
    feats = np.empty((len(nodes), d))
    if rows:
        feats[: len(rows)] = np.vstack(rows)
    feats[len(rows): len(rows) + n] = sample.video_feats
    feats[len(rows) + n:] = sample.audio_feats
    return nodes, feats


def build_intra_edges(nodes, sample: Sample, pairs, anchors) -> list[Edge]:
    n_tok = sample.n_tokens
    n_utt = len(sample.utterances)
    edges = [Edge(i, i + 1, "token-token") for i in range(n_tok - 1)]
    base = n_tok
    for k, p in enumerate(pairs):
        rel, ent = base + 2 * k, base + 2 * k + 1
        span = anchors[p.anchor_index]
        edges += [Edge(t, rel, "token-knowledge") for t in range(span.start, span.end)]
        edges.append(Edge(rel, ent, "knowledge-knowledge"))
    vbase = base + 2 * len(pairs)
    abase = vbase + n_utt
    edges += [Edge(vbase + j, vbase + j + 1, "video-video") for j in range(n_utt - 1)]
    edges += [Edge(abase + j, abase + j + 1, "audio-audio") for j in range(n_utt - 1)]
    return edges


def build_inter_edges(nodes, sample: Sample) -> list[Edge]:
    vbase = next(i for i, n in enumerate(nodes) if n.kind == VIDEO)
    abase = vbase + len(sample.utterances)
    edges = []
    for i, node in enumerate(nodes):
        if node.kind == TOKEN:
            edges.append(Edge(i, vbase + node.a, "token-video"))
    for i, node in enumerate(nodes):
        if node.kind == TOKEN:
            edges.append(Edge(i, abase + node.a, "token-audio"))
    return edges


def normalize(adj: sp.spmatrix) -> sp.csr_matrix:
    """D^-1/2 A D^-1/2 for a symmetric matrix with positive degrees."""
    adj = sp.csr_matrix(adj)
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv = 1.0 / np.sqrt(deg)
    coo = adj.tocoo()
    vals = inv[coo.row] * coo.data * inv[coo.col]
    return sp.csr_matrix((vals, (coo.row, coo.col)), shape=adj.shape)


def combine_normalize(a1, a2, n_nodes: int):
    """OR the two edge families, add self-loops, and normalise symmetrically."""
    ii, jj = [], []
    for e in list(a1) + list(a2):
        if not (0 <= e[0] < n_nodes and 0 <= e[1] < n_nodes):
            raise IndexError(f"edge {tuple(e)} outside {n_nodes} nodes")
        ii += [e[0], e[1]]
        jj += [e[1], e[0]]
    ii += range(n_nodes)
    jj += range(n_nodes)
    adj = sp.csr_matrix((np.ones(len(ii)), (ii, jj)), shape=(n_nodes, n_nodes))
    adj.data[:] = 1.0  # duplicates summed by the constructor; OR semantics
    return adj, normalize(adj)


def _keep(node: Node, variant: Variant) -> bool:
    if variant is Variant.WithoutText:
        return node.kind in (VIDEO, AUDIO)
    if variant is Variant.WithoutKnowledge:
        return node.kind not in (KNOW_REL, KNOW_ENT)
    if variant is Variant.WithoutVideo:
        return node.kind != VIDEO
    if variant is Variant.WithoutAudio:
        return node.kind != AUDIO
    return True


def build_graph(sample: Sample, view: KnowledgeView, provider, variant: Variant = Variant.Full,
                cap: int = 4) -> CrossModalGraph:
    if view.cutoff != sample.call_date:
        raise ValueError(f"sample {sample.id}: view cutoff {view.cutoff} != call date {sample.call_date}")
    anchors, pairs = [], []
    if variant not in (Variant.WithoutKnowledge, Variant.WithoutText):
        anchors = link_entities(view, sample.tokens)
        pairs = retrieve_knowledge(view, anchors, cap)
    nodes, feats = assemble_nodes(sample, pairs, provider, view.parent)
    edges = build_intra_edges(nodes, sample, pairs, anchors) + build_inter_edges(nodes, sample)

    keep = [i for i, n in enumerate(nodes) if _keep(n, variant)]
    if not keep:
        raise ValueError(f"sample {sample.id}: variant {variant.name} leaves no nodes")
    remap = {old: new for new, old in enumerate(keep)}
    nodes = [nodes[i] for i in keep]
    feats = feats[keep]
    edges = [Edge(remap[e.i], remap[e.j], e.family) for e in edges if e.i in remap and e.j in remap]
    n = len(nodes)

    if variant is Variant.WithoutGraph:
        edges = []
    elif variant is Variant.FullGraph:
        edges = [Edge(i, j, "full") for i in range(n) for j in range(i + 1, n)]
    adj, norm = combine_normalize(edges, [], n)
    feats.flags.writeable = False
    return CrossModalGraph(tuple(nodes), feats, tuple(edges), adj, norm, tuple(pairs), tuple(anchors),
                           variant, sample.id)


def dump_graph(graph: CrossModalGraph, kg=None) -> str:
    """Line-based text dump: ``NODE <idx> <kind> ...`` then ``EDGE <i> <j> <family>``."""
    lines = [f"# sample {graph.sample_id} variant {graph.variant.name} nodes {graph.n_nodes}"]
    for idx, node in enumerate(graph.nodes):
        extra = ""
        if node.kind in (KNOW_REL, KNOW_ENT) and kg is not None:
            p = graph.pairs[node.a]
            label = kg.relation(p.relation) if node.kind == KNOW_REL else kg.entity(p.neighbor)
            extra = f" {label!r} {p.direction} {p.timestamp.isoformat()}"
        parts = [str(node.a)] if node.b < 0 else [str(node.a), str(node.b)]
        lines.append(f"NODE {idx} {node.kind} {' '.join(parts)}{extra}")
    for e in graph.edges:
        lines.append(f"EDGE {e.i} {e.j} {e.family}")
    return "\n".join(lines) + "\n"

"""Sample data model, file loaders, feature providers and synthetic data."""
from __future__ import annotations

import datetime as dt
import enum
import hashlib
import json
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import DimensionError, FeatureKeyError, LoadError
from .kg_store import KnowledgeGraph

DEFAULT_DIM = 768
DEFAULT_MAX_TOKENS = 768


class Asset(enum.Enum):
    StockIndexSmall = "Stock Index (Small)"
    StockIndexLarge = "Stock Index (Large)"
    Gold = "Gold"
    CurrencyExchangeRate = "Currency Exchange Rate"
    BondYield10Y = "Long-term Bond Yield (10-years)"
    BondYield3M = "Short-term Bond Yield (3-months)"

    @property
    def display(self) -> str:
        return self.value


class Horizon(enum.IntEnum):
    D1 = 1
    D3 = 3
    D7 = 7
    D15 = 15


# canonical (asset, horizon) order used by every 24-wide vector in the package
KEYS = tuple((a, h) for a in Asset for h in Horizon)
N_KEYS = len(KEYS)


def key_name(asset: Asset, horizon: Horizon) -> str:
    return f"{asset.name}:{int(horizon)}"


def parse_key(name: str) -> tuple[Asset, Horizon]:
    asset, _, tau = name.partition(":")
    return Asset[asset], Horizon(int(tau))


@dataclass(frozen=True)
class Labels:
    movement: np.ndarray  # (24,) of 0/1, KEYS order
    volatility: np.ndarray  # (24,) non-negative

    def __post_init__(self):
        if self.movement.shape != (N_KEYS,) or self.volatility.shape != (N_KEYS,):
            raise ValueError("label vectors must have one entry per (asset, horizon)")
        if not np.isin(self.movement, (0, 1)).all():
            raise ValueError("movement labels must be 0 or 1")
        if not (np.isfinite(self.volatility).all() and (self.volatility >= 0).all()):
            raise ValueError("volatility labels must be finite and non-negative")

    @classmethod
    def from_maps(cls, movement: dict, volatility: dict) -> "Labels":
        mv = np.array([movement[k] for k in KEYS], dtype=np.float64)
        vol = np.array([volatility[k] for k in KEYS], dtype=np.float64)
        return cls(mv, vol)

    def movement_map(self) -> dict:
        return {k: int(v) for k, v in zip(KEYS, self.movement)}

    def volatility_map(self) -> dict:
        return {k: float(v) for k, v in zip(KEYS, self.volatility)}


@dataclass(frozen=True, eq=False)
class Sample:
    id: str
    call_date: dt.date
    utterances: tuple[tuple[str, ...], ...]
    video_feats: np.ndarray
    audio_feats: np.ndarray
    labels: Labels

    def __post_init__(self):
        n = len(self.utterances)
        if n < 1:
            raise ValueError(f"sample {self.id}: no utterances")
        if any(len(u) == 0 for u in self.utterances):
            raise ValueError(f"sample {self.id}: empty utterance")
        for name in ("video_feats", "audio_feats"):
            m = getattr(self, name)
            if m.ndim != 2 or m.shape[0] != n:
                raise DimensionError(f"sample {self.id}: {name} has {m.shape[0] if m.ndim else 0} rows for {n} utterances")
            if not np.isfinite(m).all():
                raise ValueError(f"sample {self.id}: non-finite {name}")
            m.flags.writeable = False

    @property
    def tokens(self) -> list[str]:
        return [tok for u in self.utterances for tok in u]

    @property
    def n_tokens(self) -> int:
        return sum(len(u) for u in self.utterances)

    @property
    def dim(self) -> int:
        return self.video_feats.shape[1]


# --- feature providers -------------------------------------------------------

@lru_cache(maxsize=200_000)
def _hash_embed(text: str, dim: int, seed: int) -> np.ndarray:
    key = struct.pack("<q", seed)
    words = []
    counter = 0
    msg = text.encode("utf-8")
    while len(words) < dim:
        digest = hashlib.blake2b(msg + struct.pack("<Q", counter), key=key, digest_size=64).digest()
        words.extend(struct.unpack("<8Q", digest))
        counter += 1
    raw = np.array(words[:dim], dtype=np.uint64)
    vec = (raw >> np.uint64(11)).astype(np.float64) * 2.0 ** -52 - 1.0
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        vec[0], norm = 1.0, 1.0
    vec = vec / norm
    vec.flags.writeable = False
    return vec


def hash_embed(text: str, dim: int, seed: int = 0) -> np.ndarray:
    """Deterministic unit-norm pseudo-embedding keyed by ``seed``."""
    if dim < 1:
        raise ValueError("dim must be positive")
    return _hash_embed(text, int(dim), int(seed))


class HashEmbed:
    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def embed(self, text: str) -> np.ndarray:
        return hash_embed(text, self.dim, self.seed)

    def __repr__(self):
        return f"HashEmbed(dim={self.dim}, seed={self.seed})"


class FileBacked:
    """Looks text up under ``txt/<text>`` in a feature archive.

    Lets real encoder outputs replace the hash embedding for tokens,
    relation names and entity names.
    """

    def __init__(self, archive: dict[str, np.ndarray], dim: int):
        self.archive = archive
        self.dim = dim

    @classmethod
    def open(cls, path) -> "FileBacked":
        dim, entries = read_feature_archive(path)
        return cls(entries, dim)

    def embed(self, text: str) -> np.ndarray:
        try:
            return self.archive[f"txt/{text}"]
        except KeyError:
            raise FeatureKeyError(f"no feature row for text {text!r}") from None


# --- feature archive ---------------------------------------------------------

MAGIC_FEATURES = b"MGRF"


def write_feature_archive(path, dim: int, entries: dict[str, np.ndarray]) -> None:
    with open(Path(path), "wb") as fh:
        fh.write(MAGIC_FEATURES + struct.pack("<II", dim, len(entries)))
        for key, row in entries.items():
            raw = key.encode("utf-8")
            row = np.asarray(row, dtype="<f4")
            if row.shape != (dim,):
                raise DimensionError(f"archive entry {key!r} has shape {row.shape}, expected ({dim},)")
            fh.write(struct.pack("<H", len(raw)) + raw + row.tobytes())


def read_feature_archive(path) -> tuple[int, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC_FEATURES:
        raise LoadError(f"{path}: bad magic {data[:4]!r}")
    dim, count = struct.unpack_from("<II", data, 4)
    off = 12
    entries = {}
    row_bytes = 4 * dim
    for n in range(count):
        if off + 2 > len(data):
            raise LoadError(f"{path}: truncated at entry {n}")
        (klen,) = struct.unpack_from("<H", data, off)
        off += 2
        key = data[off:off + klen].decode("utf-8")
        off += klen
        if off + row_bytes > len(data):
            raise LoadError(f"{path}: truncated payload for {key!r}")
        row = np.frombuffer(data, dtype="<f4", count=dim, offset=off).astype(np.float64)
        if not np.isfinite(row).all():
            raise LoadError(f"{path}: non-finite values in {key!r}")
        row.flags.writeable = False
        entries[key] = row
        off += row_bytes
    if off != len(data):
        raise LoadError(f"{path}: {len(data) - off} trailing bytes")
    return dim, entries


# --- transcripts -------------------------------------------------------------

def sample_to_record(sample: Sample) -> dict:
    return {
        "id": sample.id,
        "date": sample.call_date.isoformat(),
        "utterances": [list(u) for u in sample.utterances],
        "labels": {
            "movement": {key_name(*k): int(v) for k, v in zip(KEYS, sample.labels.movement)},
            "volatility": {key_name(*k): float(v) for k, v in zip(KEYS, sample.labels.volatility)},
        },
    }


def save_dataset(samples, path) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(sample_to_record(s), sort_keys=True) + "\n")


def _parse_labels(raw, where) -> Labels:
    if not isinstance(raw, dict) or "movement" not in raw or "volatility" not in raw:
        raise LoadError(f"{where}: labels need 'movement' and 'volatility' maps")
    maps = []
    for part in ("movement", "volatility"):
        m = raw[part]
        if not isinstance(m, dict):
            raise LoadError(f"{where}: labels.{part} must be an object")
        try:
            parsed = {parse_key(k): v for k, v in m.items()}
        except (KeyError, ValueError):
            raise LoadError(f"{where}: bad label key in labels.{part}") from None
        missing = [key_name(*k) for k in KEYS if k not in parsed]
        if missing:
            raise LoadError(f"{where}: labels.{part} missing {', '.join(missing)}")
        maps.append(parsed)
    try:
        return Labels.from_maps(*maps)
    except (TypeError, ValueError) as exc:
        raise LoadError(f"{where}: {exc}") from None


def _feature_rows(sid, kind, n, dim, archive, where):
    rows = [archive.get(f"{sid}/{kind}/{j}") for j in range(n)]
    extra = 0
    while f"{sid}/{kind}/{n + extra}" in archive:
        extra += 1
    if extra:
        raise DimensionError(f"{where} ({sid}): {n + extra} {kind} feature rows for {n} utterances")
    for j, r in enumerate(rows):
        if r is None:
            raise FeatureKeyError(f"{where} ({sid}): missing feature key {sid}/{kind}/{j}")
    return np.vstack(rows)


def load_dataset(transcripts, features=None, dim: int = DEFAULT_DIM,
                 max_tokens: int = DEFAULT_MAX_TOKENS, seed: int = 0) -> list[Sample]:
    """Read line-delimited transcript records, attaching video/audio features.

    Without a feature archive, rows are hash embeddings of ``vid:<id>:<j>`` /
    ``aud:<id>:<j>``. With one, ``dim`` is taken from the archive.
    """
    archive = None
    if features is not None:
        dim, archive = read_feature_archive(features)
    samples = []
    seen_ids = set()
    with open(Path(transcripts), encoding="utf-8") as fh:
        for idx, line in enumerate(fh):
            if not line.strip():
                continue
            where = f"{transcripts}: record {idx}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LoadError(f"{where}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise LoadError(f"{where}: record must be an object")
            for fld in ("id", "date", "utterances", "labels"):
                if fld not in rec:
                    raise LoadError(f"{where}: missing field {fld!r}")
            sid = rec["id"]
            if not isinstance(sid, str) or not sid:
                raise LoadError(f"{where}: id must be a non-empty string")
            if sid in seen_ids:
                raise LoadError(f"{where}: duplicate id {sid!r}")
            seen_ids.add(sid)
            try:
                when = dt.date.fromisoformat(rec["date"])
            except (TypeError, ValueError):
                raise LoadError(f"{where}: bad date {rec['date']!r}") from None
            utts = rec["utterances"]
            if (not isinstance(utts, list) or not utts
                    or any(not isinstance(u, list) or not u or not all(isinstance(t, str) and t for t in u)
                           for u in utts)):
                raise LoadError(f"{where}: utterances must be a non-empty list of non-empty token lists")
            n_tok = sum(len(u) for u in utts)
            if n_tok > max_tokens:
                raise LoadError(f"{where}: {n_tok} tokens exceeds the limit of {max_tokens}")
            labels = _parse_labels(rec["labels"], where)
            n = len(utts)
            if archive is None:
                video = np.vstack([hash_embed(f"vid:{sid}:{j}", dim, seed) for j in range(n)])
                audio = np.vstack([hash_embed(f"aud:{sid}:{j}", dim, seed) for j in range(n)])
            else:
                video = _feature_rows(sid, "vid", n, dim, archive, where)
                audio = _feature_rows(sid, "aud", n, dim, archive, where)
            try:
                samples.append(Sample(sid, when, tuple(tuple(u) for u in utts), video, audio, labels))
            except DimensionError:
                raise
            except ValueError as exc:
                raise LoadError(f"{where}: {exc}") from None
    return samples


# --- synthetic data ----------------------------------------------------------

SYNTH_RELATIONS = ("impact", "own", "supply", "partner", "regulate")
FILLER = (
    "the committee noted that inflation remains elevated while growth moderated "
    "and labour markets stayed tight so policy will respond to incoming data "
    "with rates held steady as members assessed risks to the outlook"
).split()
# volatility scale per asset
VOL_SCALE = dict(zip(Asset, (20.0, 15.0, 10.0, 5.0, 2.0, 1.0)))
SIGNAL_HUB = "policy shock"


@dataclass
class SynthConfig:
    n_samples: int = 200
    n_utterances: int = 2
    dim: int = 16
    kg_size: int = 2000
    plant_knowledge_signal: bool = True
    tokens_per_utterance: int = 4
    facts_per_entity: int = 3


def _pseudo_word(rng) -> str:
    cons, vow = "bdfgklmnprstvz", "aeiou"
    return "".join(rng.choice(list(cons)) + rng.choice(list(vow)) for _ in range(3))


def synth_generate(config: SynthConfig, seed: int = 0):
    """Generate ``(samples, kg)`` reproducibly from ``seed``.

    Every non-hub entity has ``facts_per_entity`` pre-period facts linking it
    to its hub.
    Half of them are tied to the designated hub ``SIGNAL_HUB``; each call
    mentions one entity. With the signal planted, every movement label equals
    whether the mentioned entity is tied to the designated hub, which can only
    be read off the retrieved knowledge, not the entity's own name. A second,
    dated-after-every-call fact ties each entity to the opposite hub so that
    any temporal leak would flip the signal.
    """
    if min(config.n_samples, config.n_utterances, config.dim, config.kg_size,
           config.facts_per_entity, config.tokens_per_utterance) < 1:
        raise ValueError("synthetic counts must be positive")
    if config.facts_per_entity > len(SYNTH_RELATIONS):
        raise ValueError(f"at most {len(SYNTH_RELATIONS)} facts per entity")
    rng = np.random.default_rng(seed)
    n_ent = max(2, config.kg_size)
    names: list[str] = []
    taken = set(FILLER) | {SIGNAL_HUB, "noise hub"}
    while len(names) < n_ent:
        w = f"{_pseudo_word(rng)} {rng.choice(['bank', 'fund', 'corp', 'group'])}"
        if w not in taken:
            taken.add(w)
            names.append(w)
    tied = np.zeros(n_ent, dtype=bool)
    tied[rng.permutation(n_ent)[: n_ent // 2]] = True

    start = dt.date(2010, 1, 1)
    first_call = dt.date(2015, 1, 1)
    span_days = 365 * 5
    future = first_call + dt.timedelta(days=span_days + 30)
    rows = []
    for i, name in enumerate(names):
        hub = SIGNAL_HUB if tied[i] else "noise hub"
        for rel in rng.choice(SYNTH_RELATIONS, size=config.facts_per_entity, replace=False):
            past = start + dt.timedelta(days=int(rng.integers(0, (first_call - start).days)))
            rows.append((name, str(rel), hub, past))
        rows.append((name, "impact", "noise hub" if tied[i] else SIGNAL_HUB, future))
    kg = KnowledgeGraph.from_records(rows)

    samples = []
    for s in range(config.n_samples):
        sid = f"synth-{seed}-{s:05d}"
        when = first_call + dt.timedelta(days=int(rng.integers(0, span_days)))
        utts = [[str(w) for w in rng.choice(FILLER, size=config.tokens_per_utterance)]
                for _ in range(config.n_utterances)]
        ent = int(rng.integers(n_ent))
        u = int(rng.integers(config.n_utterances))
        pos = int(rng.integers(len(utts[u]) + 1))
        utts[u][pos:pos] = names[ent].split()
        present = 1.0 if tied[ent] else 0.0
        if config.plant_knowledge_signal:
            mv = np.full(N_KEYS, present)
        else:
            mv = rng.integers(0, 2, size=N_KEYS).astype(np.float64)
        vol = np.abs(rng.standard_normal(N_KEYS)) * np.array([VOL_SCALE[a] for a, _ in KEYS])
        n = config.n_utterances
        video = np.vstack([hash_embed(f"vid:{sid}:{j}", config.dim) for j in range(n)])
        audio = np.vstack([hash_embed(f"aud:{sid}:{j}", config.dim) for j in range(n)])
        samples.append(Sample(sid, when, tuple(tuple(x) for x in utts), video, audio, Labels(mv, vol)))
    return samples, kg


def entity_presence(samples, kg: KnowledgeGraph) -> np.ndarray:
    """1.0 where a sample mentions an entity tied to ``SIGNAL_HUB`` before its call."""
    from .kg_store import link_entities, temporal_view

    hub = kg.entity_ids.get(SIGNAL_HUB)
    out = []
    for s in samples:
        view = temporal_view(kg, s.call_date)
        hit = False
        for m in link_entities(view, s.tokens):
            for i in view.incident(m.entity):
                t = kg.triples[i]
                if hub in (t.head, t.tail) and m.entity != hub:
                    hit = True
        out.append(1.0 if hit else 0.0)
    return np.array(out)

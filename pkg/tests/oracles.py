"""Slow, independent reference implementations used only by the tests."""
from fractions import Fraction

import numpy as np

from mgr.corpus import N_KEYS


def brute_force_link(kg, cutoff, tokens):
    """All-spans matcher: enumerate every (entity, position) hit, then take
    leftmost-longest greedily."""
    low = [t.lower() for t in tokens]
    visible = set()
    for t in kg.triples:
        if t.timestamp < cutoff:
            visible.update((t.head, t.tail))
    cands = {}
    for ent, surface in enumerate(kg.entities):
        if ent not in visible:
            continue
        words = surface.lower().split()
        for i in range(len(low) - len(words) + 1):
            if low[i:i + len(words)] == words:
                span = (i, i + len(words))
                cands[span] = min(cands.get(span, ent), ent)
    out = []
    cursor = 0
    for (start, end) in sorted(cands, key=lambda s: (s[0], -(s[1] - s[0]))):
        if start >= cursor:
            out.append((cands[(start, end)], start, end))
            cursor = end
    return out


def dense_normalize(adj):
    adj = np.asarray(adj, dtype=np.float64)
    d = np.diag(1.0 / np.sqrt(adj.sum(axis=1)))
    return d @ adj @ d


def dense_forward(features, adjacency, weights, token_rows, mhead, mbias, vhead, vbias):
    """Loop-based GCN reference: explicit sums, no shared code with mgr.model."""
    a = dense_normalize(adjacency)
    g = np.array(features, dtype=np.float64)
    n = g.shape[0]
    for w in weights:
        d = w.shape[1]
        new = np.zeros((n, d))
        for i in range(n):
            agg = sum(a[i, k] * g[k] for k in range(n))
            for c in range(d):
                new[i, c] = max(0.0, sum(agg[r] * w[r, c] for r in range(len(agg))))
        g = new
    rows = token_rows if len(token_rows) else range(n)
    pooled = sum(g[i] for i in rows) / len(rows)
    logits = np.array([sum(pooled[r] * mhead[r, k] for r in range(len(pooled))) + mbias[k] for k in range(N_KEYS)])
    vol = np.array([sum(pooled[r] * vhead[r, k] for r in range(len(pooled))) + vbias[k] for k in range(N_KEYS)])
    return g, logits, vol


def confusion_f1(preds, labels):
    tp = fp = fn = 0
    for p, y in zip(preds, labels):
        if p == 1 and y == 1:
            tp += 1
        elif p == 1 and y == 0:
            fp += 1
        elif p == 0 and y == 1:
            fn += 1
    return 0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)


def loop_mse(preds, labels):
    """Exact rational accumulation of the float squared errors."""
    total = Fraction(0)
    for p, y in zip(preds, labels):
        d = float(p) - float(y)
        total += Fraction(d * d)
    return float(total) / len(preds)

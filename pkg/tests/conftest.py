import datetime as dt
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mgr.corpus import N_KEYS, Labels, Sample  # noqa: E402
from mgr.kg_store import KnowledgeGraph  # noqa: E402

_ACCEPTANCE = []


def record_criterion(number, name, passed, detail):
    _ACCEPTANCE.append((number, name, passed, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {number}. {name}: {detail}")


def make_sample(utterances, sid="s0", date=dt.date(2021, 6, 1), dim=4, movement=None, volatility=None, seed=0):
    rng = np.random.default_rng(seed)
    n = len(utterances)
    labels = Labels(np.asarray(movement if movement is not None else np.ones(N_KEYS), dtype=np.float64),
                    np.asarray(volatility if volatility is not None else np.full(N_KEYS, 2.0), dtype=np.float64))
    return Sample(sid, date, tuple(tuple(u) for u in utterances), rng.standard_normal((n, dim)),
                  rng.standard_normal((n, dim)), labels)


@pytest.fixture
def small_kg():
    d = dt.date
    return KnowledgeGraph.from_records([
        ("A", "impact", "B", d(2020, 6, 1)),
        ("C", "own", "A", d(2020, 1, 1)),
        ("interest rate", "impact", "Gold", d(2019, 3, 3)),
        ("B", "own", "C", d(2022, 1, 1)),
    ])

import numpy as np
import pytest

from aclr.data import Dataset, EmbeddingTable, Post, make_event
from aclr.graph import Corpus
from aclr.synth import SynthConfig, generate_benchmark


def random_parents(rng, n):
    """Parent indices of a random recursive tree with ``n`` nodes."""
    return [-1] + [int(rng.integers(i)) for i in range(1, n)]


def event_from_parents(eid, label, parents, delays=None):
    ids = [f"{eid}-{i}" for i in range(len(parents))]
    if delays is None:
        delays = [float(i) for i in range(len(parents))]
    posts = [Post(ids[i], None if p < 0 else ids[p], delays[i], f"tok{i} tok{p}")
             for i, p in enumerate(parents)]
    return make_event(eid, label, posts)


def numeric_grad(f, arr, h=1e-5):
    """Central differences of scalar ``f`` w.r.t. every entry of ``arr`` (mutated and restored)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        up = f()
        arr[i] = old - h
        down = f()
        arr[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    """Norm-wise relative error between two gradient arrays."""
    a, b = np.asarray(a), np.asarray(b)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def toy_corpus(n_events=12, dim=4, seed=0, size=5, prefix="e"):
    rng = np.random.default_rng(seed)
    events, vectors = [], {}
    for k in range(n_events):
        ev = event_from_parents(f"{prefix}{k}", k % 2, random_parents(rng, size))
        events.append(ev)
        for p in ev.posts:
            vectors[p.id] = rng.standard_normal(dim) + (0.8 if ev.label else -0.8)
    return Corpus(Dataset(tuple(events), "target"), EmbeddingTable(dim, vectors))


@pytest.fixture(scope="session")
def small_bench():
    return generate_benchmark(SynthConfig(n_source=40, n_target=20, mean_posts=5, max_depth=3, seed=3))


@pytest.fixture(scope="session")
def small_corpora(small_bench):
    b = small_bench
    return Corpus(b.source.dataset, b.source.table), Corpus(b.target.dataset, b.target.table)


# acceptance criteria report: one line per criterion in the terminal summary

CRITERIA: dict[int, str] = {}


def record_criterion(number, title, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    CRITERIA[number] = f"criterion {number} [{status}] {title}" + (f": {detail}" if detail else "")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[n])

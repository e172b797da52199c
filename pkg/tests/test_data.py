import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aclr.data import (
    Dataset,
    DatasetError,
    EmbeddingError,
    EmbeddingTable,
    HashingEmbedder,
    Post,
    StratificationError,
    embed_event,
    event_from_json,
    event_to_json,
    load_dataset,
    load_embeddings,
    make_event,
    parent_index,
    save_dataset,
    save_embeddings,
    split_folds,
    stratified_split,
    truncate_event,
)

from conftest import event_from_parents, random_parents


def _line(obj):
    return json.dumps(obj) + "\n"


def test_minimal_file(tmp_path):
    p = tmp_path / "one.jsonl"
    p.write_text(_line({"id": "e1", "label": 1, "posts": [{"id": "a", "parent": None, "t": 0}]}))
    ds = load_dataset(p)
    assert len(ds) == 1
    assert len(ds.events[0]) == 1
    assert ds.events[0].root.id == "a"


def test_cycle_is_rejected_with_diagnostic(tmp_path):
    posts = [{"id": "r", "parent": None, "t": 0},
             {"id": "a", "parent": "b", "t": 1},
             {"id": "b", "parent": "a", "t": 2}]
    p = tmp_path / "cyc.jsonl"
    p.write_text(_line({"id": "bad", "label": 0, "posts": posts}))
    with pytest.raises(DatasetError, match=r"cyc.jsonl:1: .*'bad'.*cycle"):
        load_dataset(p)


@pytest.mark.parametrize("posts,msg", [
    ([{"id": "a", "parent": None, "t": 0}, {"id": "b", "parent": "zz", "t": 1}], "dangling"),
    ([{"id": "a", "parent": None, "t": 0}, {"id": "a", "parent": "a", "t": 1}], "duplicate post"),
    ([{"id": "a", "parent": None, "t": 0}, {"id": "b", "parent": None, "t": 1}], "exactly one root"),
    ([{"id": "a", "parent": None, "t": 5}], "delay 0"),
    ([{"id": "a", "parent": None, "t": 0}, {"id": "b", "parent": "a", "t": -1}], "invalid delay"),
    ([], "no posts"),
])
def test_tree_invariants(posts, msg):
    with pytest.raises(DatasetError, match=msg):
        event_from_json({"id": "x", "label": 1, "posts": posts})


def test_bad_label_and_missing_field():
    with pytest.raises(DatasetError, match="label"):
        event_from_json({"id": "x", "label": 3, "posts": [{"id": "a", "parent": None, "t": 0}]})
    with pytest.raises(DatasetError, match="malformed"):
        event_from_json({"id": "x", "posts": []})


def test_load_is_all_or_nothing(tmp_path):
    good = {"id": "e1", "label": 1, "posts": [{"id": "a", "parent": None, "t": 0}]}
    p = tmp_path / "d.jsonl"
    p.write_text(_line(good) + "{not json\n")
    with pytest.raises(DatasetError, match=":2: malformed JSON"):
        load_dataset(p)
    p.write_text(_line(good) + _line(good))
    with pytest.raises(DatasetError, match="duplicate event id"):
        load_dataset(p)


def test_posts_are_chronological():
    posts = [Post("c", "a", 9.0), Post("a", None, 0.0), Post("b", "a", 3.0)]
    ev = make_event("e", 0, posts)
    assert ev.post_ids() == ["a", "b", "c"]
    assert parent_index(ev) == [-1, 0, 0]


def test_dataset_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    events = tuple(event_from_parents(f"e{k}", k % 2, random_parents(rng, 7)) for k in range(5))
    ds = Dataset(events, "source", "x")
    save_dataset(ds, tmp_path / "d.jsonl")
    back = load_dataset(tmp_path / "d.jsonl", "source")
    assert back.events == ds.events
    assert event_from_json(event_to_json(events[0])) == events[0]


def test_embedding_lookup_and_round_trip(tmp_path):
    ev = make_event("e", 1, [Post("p", None, 0.0)])
    table = EmbeddingTable(4, {"p": np.array([1.0, 2.0, 3.0, 4.0])})
    assert embed_event(ev, table).tolist() == [[1.0, 2.0, 3.0, 4.0]]
    save_embeddings(table, tmp_path / "e.jsonl")
    back = load_embeddings(tmp_path / "e.jsonl")
    assert back.dim == 4
    assert np.array_equal(back.vectors["p"], table.vectors["p"])


def test_embedding_errors_list_post_ids():
    ev = make_event("e", 1, [Post("p", None, 0.0), Post("q", "p", 1.0)])
    with pytest.raises(EmbeddingError, match=r"\['q'\]"):
        EmbeddingTable(2, {"p": np.zeros(2)}).embed(ev)
    with pytest.raises(EmbeddingError, match=r"\['p', 'q'\]"):
        HashingEmbedder(8).embed(ev)


def test_embedding_file_needs_header(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text(_line({"id": "a", "vec": [1.0]}))
    with pytest.raises(EmbeddingError, match="header"):
        load_embeddings(p)


def test_hashing_embedder_is_deterministic():
    ev = make_event("e", 1, [Post("a", None, 0.0, "same words here"),
                             Post("b", "a", 1.0, "same words here")])
    X = HashingEmbedder(16).embed(ev)
    assert np.array_equal(X[0], X[1])
    assert np.linalg.norm(X[0]) == pytest.approx(1.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["rumor", "fake", "true", "#covid", "谣言", "ok", "ok"]), min_size=1, max_size=12),
       st.randoms(use_true_random=False))
def test_hashing_is_token_order_invariant(tokens, rnd):
    shuffled = list(tokens)
    rnd.shuffle(shuffled)
    emb = HashingEmbedder(32)
    assert np.array_equal(emb.embed_text(" ".join(tokens)), emb.embed_text(" ".join(shuffled)))


# truncation

def _timed_event():
    return event_from_parents("e", 1, [-1, 0, 0, 1, 3, 2], delays=[0.0, 10.0, 20.0, 30.0, 40.0, 50.0])


def test_truncate_at_time_zero_is_root_only():
    cut = truncate_event(_timed_event(), elapsed_seconds=0)
    assert cut.post_ids() == ["e-0"]


def test_truncate_saturation_is_identity():
    ev = _timed_event()
    assert truncate_event(ev, post_count=len(ev)) is ev
    assert truncate_event(ev, post_count=1000) is ev
    assert truncate_event(ev, elapsed_seconds=1e9) is ev


def test_truncate_drops_orphans():
    # e-2 is timestamped before its parent e-1; it cannot be shown without it
    ev = event_from_parents("e", 1, [-1, 0, 1], delays=[0.0, 50.0, 30.0])
    assert truncate_event(ev, elapsed_seconds=40).post_ids() == ["e-0"]
    assert truncate_event(ev, post_count=2).post_ids() == ["e-0"]
    assert truncate_event(ev, elapsed_seconds=50) is ev


def test_truncate_needs_exactly_one_argument():
    with pytest.raises(ValueError):
        truncate_event(_timed_event())
    with pytest.raises(ValueError):
        truncate_event(_timed_event(), post_count=1, elapsed_seconds=1)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 40), st.integers(1, 40))
def test_truncation_is_monotone_subset(seed, c1, c2):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 40))
    delays = np.concatenate([[0.0], np.sort(rng.exponential(100.0, n - 1))]).tolist()
    ev = event_from_parents("e", 1, random_parents(rng, n), delays)
    lo, hi = sorted((c1, c2))
    small = set(truncate_event(ev, post_count=lo).post_ids())
    big = set(truncate_event(ev, post_count=hi).post_ids())
    assert small <= big <= set(ev.post_ids())
    t_small = set(truncate_event(ev, elapsed_seconds=delays[min(lo, n) - 1]).post_ids())
    assert t_small <= set(ev.post_ids())


# folds

def _balanced(n_per_class):
    evs = [make_event(f"e{i}", i % 2, [Post(f"p{i}", None, 0.0)]) for i in range(2 * n_per_class)]
    return Dataset(tuple(evs), "target")


def test_ten_events_five_folds_is_exact():
    plan = split_folds(_balanced(5), 5, seed=3)
    ds = _balanced(5).by_id()
    for i in range(5):
        labels = sorted(ds[e].label for e in plan.fold(i))
        assert labels == [0, 1]


def test_folds_are_deterministic():
    assert split_folds(_balanced(10), 5, 7) == split_folds(_balanced(10), 5, 7)


def test_fold_needs_k_per_class():
    with pytest.raises(StratificationError):
        split_folds(_balanced(3), 5)


@settings(max_examples=40, deadline=None)
@given(st.integers(5, 30), st.integers(5, 30), st.integers(0, 100))
def test_folds_partition_and_stratify(n_r, n_n, seed):
    evs = [make_event(f"r{i}", 1, [Post(f"rp{i}", None, 0.0)]) for i in range(n_r)]
    evs += [make_event(f"n{i}", 0, [Post(f"np{i}", None, 0.0)]) for i in range(n_n)]
    ds = Dataset(tuple(evs), "target")
    plan = split_folds(ds, 5, seed)
    seen = []
    for i in range(5):
        fold = plan.fold(i)
        seen += fold
        rumors = sum(1 for e in fold if e.startswith("r"))
        assert abs(rumors - n_r / 5) <= 1
        assert abs(len(fold) - rumors - n_n / 5) <= 1
        assert set(fold).isdisjoint(plan.rest(i))
    assert sorted(seen) == sorted(e.id for e in evs)


def test_stratified_split():
    sel, rest = stratified_split(_balanced(10), 0.2, seed=0)
    assert len(sel) == 4 and len(rest) == 16
    assert set(sel).isdisjoint(rest)

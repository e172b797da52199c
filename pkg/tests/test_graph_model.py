import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aclr.data import Post, make_event
from aclr.graph import (
    BOTTOM_UP,
    TOP_DOWN,
    DegenerateGraphError,
    block_diagonal,
    build_adjacency,
    mean_pool_matrix,
    normalize_adjacency,
    prepare_event,
    tree_adjacency,
)
from aclr.model import (
    SYNTHETIC_DIMS,
    ModelDims,
    forward,
    forward_batch,
    init_params,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from aclr.tensor import DimensionError, Tape, Tensor, cross_entropy

from conftest import event_from_parents, numeric_grad, random_parents, rel_err, toy_corpus


def naive_norm(A):
    D = np.diag(A.sum(axis=1) ** -0.5)
    return D @ A @ D


def test_single_node():
    adj = build_adjacency(make_event("e", 1, [Post("a", None, 0.0)]))
    assert adj.A.tolist() == [[1.0]]
    assert adj.A_hat.tolist() == [[1.0]]


def test_root_plus_reply():
    ev = event_from_parents("e", 1, [-1, 0])
    adj = build_adjacency(ev, TOP_DOWN)
    assert adj.A.tolist() == [[1, 0], [1, 1]]
    assert np.allclose(adj.A_hat, [[1, 0], [0.70710678, 0.5]], atol=1e-8)
    assert build_adjacency(ev, BOTTOM_UP).A.tolist() == [[1, 1], [0, 1]]


def test_identity_normalizes_to_identity():
    assert np.array_equal(normalize_adjacency(np.eye(3)), np.eye(3))


def test_zero_degree_row():
    with pytest.raises(DegenerateGraphError):
        normalize_adjacency(np.array([[1.0, 0.0], [0.0, 0.0]]))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 64))
def test_normalization_matches_triple_product(seed, n):
    parents = random_parents(np.random.default_rng(seed), n)
    for direction in (TOP_DOWN, BOTTOM_UP):
        A = tree_adjacency(parents, direction)
        assert np.abs(normalize_adjacency(A) - naive_norm(A)).max() <= 1e-12
    assert np.array_equal(tree_adjacency(parents, BOTTOM_UP), tree_adjacency(parents, TOP_DOWN).T)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 20))
def test_relabeling_conjugates_a_hat(seed, n):
    rng = np.random.default_rng(seed)
    A = tree_adjacency(random_parents(rng, n))
    P = np.eye(n)[rng.permutation(n)]
    assert np.allclose(normalize_adjacency(P @ A @ P.T), P @ normalize_adjacency(A) @ P.T,
                       atol=1e-12, rtol=0)


def test_batch_helpers():
    B = block_diagonal([np.ones((1, 1)), 2 * np.ones((2, 2))])
    assert B.tolist() == [[1, 0, 0], [0, 2, 2], [0, 2, 2]]
    assert mean_pool_matrix([1, 2]).tolist() == [[1, 0, 0], [0, 0.5, 0.5]]


# model

def test_init_is_deterministic():
    a, b = init_params(SYNTHETIC_DIMS, 4), init_params(SYNTHETIC_DIMS, 4)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
    c = init_params(SYNTHETIC_DIMS, 5)
    assert not np.array_equal(a.W_c.data, c.W_c.data)


def test_glorot_variance():
    W = init_params(ModelDims(768, 512, 128), 0).W_td[1].data
    assert W.shape == (512, 128)
    assert abs(W.std() / np.sqrt(2.0 / (512 + 128)) - 1) < 0.1
    assert init_params(ModelDims(768, 512, 128), 0).b_c.data.tolist() == [[0.0, 0.0]]


def test_layer_shapes():
    assert ModelDims(4, 3, 2, layers=3).layer_shapes() == [(4, 3), (3, 3), (3, 2)]
    with pytest.raises(ValueError):
        ModelDims(0, 3, 2)


def _graph(parents, dim=4, seed=0):
    ev = event_from_parents("e", 1, parents)
    X = np.random.default_rng(seed).standard_normal((len(parents), dim))
    return X, build_adjacency(ev, TOP_DOWN).A_hat, build_adjacency(ev, BOTTOM_UP).A_hat


def test_single_node_is_an_mlp():
    p = init_params(ModelDims(4, 3, 2), 1)
    x = np.random.default_rng(0).standard_normal((1, 4))
    rep = forward(x, np.eye(1), np.eye(1), p)
    relu = lambda z: np.maximum(z, 0)
    td = relu(relu(x @ p.W_td[0].data) @ p.W_td[1].data)
    bu = relu(relu(x @ p.W_bu[0].data) @ p.W_bu[1].data)
    assert np.allclose(rep.o.data, np.hstack([td, bu]), atol=1e-15)


def test_zero_features_give_zero_output():
    p = init_params(ModelDims(4, 3, 2), 1)
    _, td, bu = _graph([-1, 0, 0, 1])
    rep = forward(np.zeros((4, 4)), td, bu, p)
    assert not rep.o.data.any()
    assert np.array_equal(rep.logits.data, p.b_c.data)
    assert rep.o.shape == (1, 4) and rep.logits.shape == (1, 2)


def test_dimension_error_names_layer():
    p = init_params(ModelDims(4, 3, 2), 1)
    _, td, bu = _graph([-1, 0])
    with pytest.raises(DimensionError, match="layer 0"):
        forward(np.zeros((2, 5)), td, bu, p)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    parents = random_parents(rng, 8)
    p = init_params(ModelDims(4, 6, 3), seed % 1000)
    X, td, bu = _graph(parents, seed=seed % 1000)
    P = np.eye(8)[rng.permutation(8)]
    a = forward(X, td, bu, p).o.data
    b = forward(P @ X, P @ td @ P.T, P @ bu @ P.T, p).o.data
    assert np.abs(a - b).max() <= 1e-9


def test_eval_is_deterministic_and_train_uses_dropout():
    p = init_params(ModelDims(4, 3, 2), 1)
    X, td, bu = _graph([-1, 0, 0, 1, 2])
    assert np.array_equal(forward(X, td, bu, p).o.data, forward(X, td, bu, p).o.data)
    a = forward(X, td, bu, p, "train", 0.5, np.random.default_rng(0)).o.data
    b = forward(X, td, bu, p, "train", 0.5, np.random.default_rng(1)).o.data
    assert not np.array_equal(a, b)
    with pytest.raises(ValueError):
        forward(X, td, bu, p, "train", 0.5)


def test_batch_matches_single_event_forward():
    corpus = toy_corpus(6, dim=4, seed=2)
    p = init_params(ModelDims(4, 5, 3), 0)
    graphs = corpus.graphs()
    batch = forward_batch(graphs, p).o.data
    single = np.vstack([forward(g.X, g.td, g.bu, p).o.data for g in graphs])
    assert np.allclose(batch, single, atol=1e-13)
    O, logits = predict(graphs, p, chunk=4)
    assert np.array_equal(O, batch)
    assert logits.shape == (6, 2)


def test_gradients_wrt_params_and_features():
    p = init_params(ModelDims(4, 3, 2), 3)
    X, td, bu = _graph([-1, 0, 0, 1, 1], seed=4)
    leaf_X = Tensor(X, requires_grad=True)
    with Tape() as tape:
        loss = cross_entropy(forward(leaf_X, td, bu, p).logits, [1])
    grads = tape.backward(loss)
    arrays = [a.copy() for a in p.arrays()]

    def f():
        q = p.with_arrays(arrays, requires_grad=False)
        return cross_entropy(forward(X, td, bu, q).logits, [1]).item()

    for t, a in zip(p.tensors(), arrays):
        assert rel_err(grads[t], numeric_grad(f, a)) < 1e-4
    assert rel_err(grads[leaf_X], numeric_grad(f, X)) < 1e-4


def test_checkpoint_round_trip(tmp_path):
    p = init_params(ModelDims(4, 3, 2, layers=3), 9)
    save_checkpoint(p, tmp_path / "c.json", {"note": "x"})
    q = load_checkpoint(tmp_path / "c.json")
    assert q.dims == p.dims
    assert all(np.array_equal(a, b) for a, b in zip(p.arrays(), q.arrays()))


def test_checkpoint_rejects_other_files(tmp_path):
    (tmp_path / "c.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError, match="not an"):
        load_checkpoint(tmp_path / "c.json")


def test_prepare_event_uses_provider():
    corpus = toy_corpus(2, dim=4)
    ev = corpus.dataset.events[0]
    g = prepare_event(ev, corpus.provider)
    assert g.n == len(ev)
    assert np.array_equal(g.bu, build_adjacency(ev, BOTTOM_UP).A_hat)
    assert corpus.graph(ev.id) is corpus.subset([ev.id]).graph(ev.id)

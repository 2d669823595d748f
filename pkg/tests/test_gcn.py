import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from cbag.errors import NumericalError
from cbag.gcn import (Adam, DropoutMask, GcnParams, IncrementalForward, TrainConfig,
                      forward, incremental_forward, init_params, load_params,
                      loss_and_grads, predict, replace_row, save_params, softmax, train)
from cbag.graph import Graph, build_normalized_adjacency, make_split

from conftest import random_graph


def dense_forward(params, graph, x=None):
    """Straight-line dense evaluation used as the reference."""
    n = graph.num_nodes
    a = np.eye(n)
    for s, t in graph.edges:
        a[s, t] = a[t, s] = 1.0
    dm = np.diag(a.sum(axis=1) ** -0.5)
    ahat = dm @ a @ dm
    x = np.asarray(graph.features if x is None else x)
    hidden = np.maximum(ahat @ x @ params.w0, 0.0)
    return ahat @ hidden @ params.w1


def fd_grads(params, ahat, x, labels, idx, mask, wd, eps=1e-4):
    out = []
    for name in ("w0", "w1"):
        w = getattr(params, name)
        g = np.zeros_like(w)
        for i in np.ndindex(w.shape):
            plus, minus = params.copy(), params.copy()
            getattr(plus, name)[i] += eps
            getattr(minus, name)[i] -= eps
            lp, _ = loss_and_grads(plus, ahat, x, labels, idx, mask, wd)
            lm, _ = loss_and_grads(minus, ahat, x, labels, idx, mask, wd)
            g[i] = (lp - lm) / (2 * eps)
        out.append(g)
    return out


def max_rel_err(a, b):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)))


def test_init_bounds_and_determinism():
    p = init_params(1, 1, 1, seed=0)
    assert abs(p.w0[0, 0]) <= np.sqrt(3) and abs(p.w1[0, 0]) <= np.sqrt(3)
    q = init_params(1433, 32, 7, seed=4)
    assert np.all(np.abs(q.w0) <= np.sqrt(6 / 1465))
    assert np.all(np.abs(q.w1) <= np.sqrt(6 / 39))
    assert q.equal(init_params(1433, 32, 7, seed=4))
    assert not q.equal(init_params(1433, 32, 7, seed=5))


def test_forward_trivial_cases(rng):
    g = random_graph(rng, 6, 4, 3)
    ahat = build_normalized_adjacency(g)
    zero = GcnParams(np.zeros((4, 5)), np.zeros((5, 3)))
    assert np.all(forward(zero, ahat, g.features) == 0)
    one = Graph.build([[1.0]], [0], [])
    p = GcnParams(np.array([[2.0]]), np.array([[3.0]]))
    assert forward(p, build_normalized_adjacency(one), one.features)[0, 0] == 6.0


def test_forward_matches_dense_oracle(rng):
    g = random_graph(rng, 6, 5, 3)
    p = init_params(5, 4, 3, seed=1)
    ahat = build_normalized_adjacency(g)
    np.testing.assert_allclose(forward(p, ahat, g.features), dense_forward(p, g),
                               rtol=0, atol=1e-10)
    # sparse input path agrees too
    np.testing.assert_allclose(forward(p, ahat, sp.csr_matrix(g.features)), dense_forward(p, g),
                               rtol=0, atol=1e-10)


def test_forward_rejects_non_finite(rng):
    g = random_graph(rng, 4, 3, 2)
    p = init_params(3, 2, 2, seed=0)
    p.w0[0, 0] = np.nan
    with pytest.raises(NumericalError):
        forward(p, build_normalized_adjacency(g), np.ones((4, 3)))


def test_softmax_rows_sum_to_one(rng):
    z = rng.normal(size=(50, 7)) * 30
    np.testing.assert_allclose(softmax(z).sum(axis=1), 1.0, atol=1e-9)


def test_uniform_logits_loss(rng):
    g = random_graph(rng, 5, 3, 4)
    ahat = build_normalized_adjacency(g)
    p = GcnParams(rng.normal(size=(3, 2)), np.zeros((2, 4)))
    wd = 5e-4
    loss, _ = loss_and_grads(p, ahat, g.features, g.labels, [0, 1, 2], weight_decay=wd)
    assert loss == pytest.approx(np.log(4) + 0.5 * wd * np.sum(p.w0 ** 2), abs=1e-12)


def test_zero_params_two_classes():
    g = Graph.build(np.eye(5), [0, 1, 0, 1, 1], [(0, 1), (2, 3)])
    p = GcnParams(np.zeros((5, 3)), np.zeros((3, 2)))
    loss, _ = loss_and_grads(p, build_normalized_adjacency(g), g.features, g.labels,
                             [0, 1, 4], weight_decay=0.0)
    assert loss == pytest.approx(np.log(2), abs=1e-15)


def test_empty_idx_rejected(rng):
    g = random_graph(rng, 5, 3, 2)
    with pytest.raises(ValueError):
        loss_and_grads(init_params(3, 2, 2, 0), build_normalized_adjacency(g), g.features,
                       g.labels, [])


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    r = np.random.default_rng(seed)
    g = random_graph(r, 5, 4, 3, edge_prob=0.5)
    ahat = build_normalized_adjacency(g)
    p = init_params(4, 3, 3, seed=seed)
    p = GcnParams(p.w0 * 3, p.w1 * 3)
    mask = DropoutMask(features=(r.random((5, 4)) > 0.3) / 0.7,
                       hidden=(r.random((5, 3)) > 0.3) / 0.7)
    for m in (None, mask):
        _, grads = loss_and_grads(p, ahat, g.features, g.labels, [0, 2, 3], m, 5e-4)
        f0, f1 = fd_grads(p, ahat, g.features, g.labels, [0, 2, 3], m, 5e-4)
        assert max_rel_err(grads.w0, f0) < 1e-4
        assert max_rel_err(grads.w1, f1) < 1e-4


def test_sparse_dropout_mask_gradients(rng):
    g = random_graph(rng, 6, 4, 2, edge_prob=0.5)
    x = sp.csr_matrix(g.features)
    ahat = build_normalized_adjacency(g)
    p = init_params(4, 3, 2, seed=2)
    mask = DropoutMask(features=(rng.random(x.nnz) > 0.5) * 2.0,
                       hidden=(rng.random((6, 3)) > 0.5) * 2.0)
    _, grads = loss_and_grads(p, ahat, x, g.labels, [1, 2, 5], mask)
    f0, f1 = fd_grads(p, ahat, x, g.labels, [1, 2, 5], mask, 5e-4)
    assert max_rel_err(grads.w0, f0) < 1e-4
    assert max_rel_err(grads.w1, f1) < 1e-4


def test_adam_single_step_matches_closed_form(rng):
    p = GcnParams(rng.normal(size=(3, 2)), rng.normal(size=(2, 2)))
    g = GcnParams(rng.normal(size=(3, 2)), rng.normal(size=(2, 2)))
    stepped = Adam(p, lr=0.01).step(p, g)
    # after one bias-corrected step: m_hat = g, v_hat = g^2
    np.testing.assert_allclose(stepped.w0, p.w0 - 0.01 * g.w0 / (np.abs(g.w0) + 1e-8), atol=1e-15)
    np.testing.assert_allclose(stepped.w1, p.w1 - 0.01 * g.w1 / (np.abs(g.w1) + 1e-8), atol=1e-15)


def test_train_one_epoch_is_one_adam_step(rng):
    g = random_graph(rng, 20, 6, 3, binary=True)
    ahat = build_normalized_adjacency(g)
    split = make_split(20, 0)
    cfg = TrainConfig(hidden=4, epochs=1, dropout=0.0, seed=11)
    params, trace = train(g, ahat, g.labels, split, cfg)
    assert len(trace) == 1
    init = init_params(6, 4, 3, seed=11)
    _, grads = loss_and_grads(init, ahat, g.features, g.labels, split.train_idx,
                              weight_decay=cfg.weight_decay)
    expected = Adam(init, lr=cfg.learning_rate).step(init, grads)
    np.testing.assert_allclose(params.w0, expected.w0, atol=1e-14)
    np.testing.assert_allclose(params.w1, expected.w1, atol=1e-14)


def test_train_is_bitwise_deterministic(rng):
    g = random_graph(rng, 40, 8, 3, edge_prob=0.1, binary=True)
    ahat = build_normalized_adjacency(g)
    split = make_split(40, 1)
    cfg = TrainConfig(hidden=8, epochs=15, seed=3)
    a, ta = train(g, ahat, g.labels, split, cfg)
    b, tb = train(g, ahat, g.labels, split, cfg)
    assert a.equal(b)
    assert ta.loss == tb.loss
    assert len(ta.train_acc) == len(ta.val_acc) == 15
    assert all(np.isfinite(ta.loss))


def test_eval_forward_is_repeatable(rng):
    g = random_graph(rng, 10, 4, 3)
    ahat = build_normalized_adjacency(g)
    p = init_params(4, 5, 3, seed=0)
    assert forward(p, ahat, g.features).tobytes() == forward(p, ahat, g.features).tobytes()


def test_predict_tie_break_and_argmax(rng):
    g = random_graph(rng, 5, 3, 4)
    ahat = build_normalized_adjacency(g)
    zero = GcnParams(np.zeros((3, 2)), np.zeros((2, 4)))
    assert predict(zero, ahat, g.features).tolist() == [0] * 5
    one = Graph.build([[1.0]], [0], [])
    p = GcnParams(np.array([[1.0]]), np.array([[0.1, 0.9, 0.3]]))
    assert predict(p, build_normalized_adjacency(one), one.features).tolist() == [1]


def test_predict_matches_row_scan(rng):
    g = random_graph(rng, 12, 5, 4)
    ahat = build_normalized_adjacency(g)
    for seed in range(5):
        p = init_params(5, 6, 4, seed)
        logits = forward(p, ahat, g.features)
        scan = []
        for row in logits:
            best = 0
            for j in range(1, len(row)):
                if row[j] > row[best]:
                    best = j
            scan.append(best)
        assert predict(p, ahat, g.features).tolist() == scan


def test_incremental_noop(rng):
    g = random_graph(rng, 15, 6, 3)
    ahat = build_normalized_adjacency(g)
    p = init_params(6, 4, 3, seed=0)
    clean = forward(p, ahat, g.features)
    for v in range(15):
        np.testing.assert_allclose(incremental_forward(p, ahat, g.features, v, g.features[v]),
                                   clean[v], rtol=0, atol=1e-12)


def test_incremental_isolated_node(rng):
    g = Graph.build(rng.random((5, 3)), [0, 1, 0, 1, 0], [(0, 1), (1, 2), (2, 3)])
    ahat = build_normalized_adjacency(g)
    p = init_params(3, 4, 2, seed=0)
    new_row = np.array([5.0, -1.0, 2.0])
    x2 = replace_row(g.features, 4, new_row)
    before, after = forward(p, ahat, g.features), forward(p, ahat, x2)
    np.testing.assert_array_equal(before[:4], after[:4])
    np.testing.assert_allclose(incremental_forward(p, ahat, g.features, 4, new_row), after[4],
                               atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 20), prob=st.floats(0.0, 0.6))
def test_incremental_matches_full_recompute(seed, n, prob):
    r = np.random.default_rng(seed)
    g = random_graph(r, n, 5, 3, edge_prob=prob)
    ahat = build_normalized_adjacency(g)
    p = init_params(5, 6, 3, seed=seed % 1000)
    node = int(r.integers(n))
    new_row = r.normal(size=5) * 2
    full = forward(p, ahat, replace_row(g.features, node, new_row))[node]
    np.testing.assert_allclose(incremental_forward(p, ahat, g.features, node, new_row), full,
                               rtol=0, atol=1e-10)


def test_incremental_cache_reuse(rng):
    g = random_graph(rng, 20, 5, 3, edge_prob=0.2)
    ahat = build_normalized_adjacency(g)
    p = init_params(5, 4, 3, seed=9)
    cache = IncrementalForward(p, ahat, g.features)
    for v in range(20):
        new_row = rng.random(5)
        full = forward(p, ahat, replace_row(g.features, v, new_row))[v]
        np.testing.assert_allclose(cache.logits_for(v, new_row), full, atol=1e-10)


def test_checkpoint_round_trip(tmp_path):
    p = init_params(7, 3, 2, seed=1)
    path = tmp_path / "model.params"
    save_params(p, path)
    raw = path.read_bytes()
    assert raw.startswith(b"gcn v1 7 3 2\n")
    assert len(raw) == len(b"gcn v1 7 3 2\n") + 8 * (7 * 3 + 3 * 2)
    assert load_params(path).equal(p)

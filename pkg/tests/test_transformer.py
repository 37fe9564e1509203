"""Forward-pass checks against the dense masked oracle and hand values."""

from __future__ import annotations

import numpy as np
import pytest

from gtcompress.errors import ValidationError
from gtcompress.graph_io import AttentionGraph, LayerWeights, Model, full_graph
from gtcompress.harness import random_graph
from gtcompress.linalg import operator_norm
from gtcompress.transformer import (
    audit_norms,
    layer_forward,
    model_forward,
    random_model,
)

from .oracles import dense_forward, jacobi_svd

ORACLE_TRIALS = 50
ORACLE_N_CAP = 64
ROW_SUM_TOL = 1e-12
ORACLE_TOL = 1e-10


def _identity_layer(width, b_1=None):
    eye = np.eye(width)
    return LayerWeights(
        w_v=eye.copy(), w_q=eye.copy(), w_k=eye.copy(),
        w_1=eye.copy(), w_2=eye.copy(), b_1=b_1,
    )


def _identity_model(width, n_layers=1):
    return Model(
        d_in=width, width=width, n_layers=n_layers,
        layers=[_identity_layer(width) for _ in range(n_layers)],
        use_sqrt_d=False,
    )


def test_single_neighbor_attention_is_exactly_one():
    # Node 1 has only the self-loop; softmax over one element.
    graph = AttentionGraph(2, [(0, 0), (0, 1), (1, 1)])
    rng = np.random.default_rng(3)
    lw = LayerWeights(*(rng.standard_normal((2, 2)) for _ in range(5)))
    t = layer_forward(lw, rng.standard_normal((2, 2)), graph)
    # Edge order is the graph's canonical order: (0,0), (0,1), (1,1).
    assert t.att[2] == 1.0


def test_zero_weights_give_uniform_attention_and_zero_output():
    graph = AttentionGraph(4, [(i, j) for i in range(4) for j in range(i + 1)])
    zeros = LayerWeights(*(np.zeros((3, 3)) for _ in range(5)))
    t = layer_forward(zeros, np.ones((3, 4)), graph)
    assert np.all(t.h_out == 0.0)
    for i in range(4):
        lo, hi = graph.indptr[i], graph.indptr[i + 1]
        assert np.all(t.att[lo:hi] == 1.0 / (hi - lo))


def test_path_graph_matches_dense_oracle():
    # 3-node path with self-loops, hand-set 2x2 weights.
    graph = AttentionGraph(3, [(0, 0), (0, 1), (1, 0), (1, 1), (1, 2), (2, 1), (2, 2)])
    lw = LayerWeights(
        w_v=np.array([[1.0, 0.5], [0.0, -1.0]]),
        w_q=np.array([[0.3, -0.2], [0.7, 0.1]]),
        w_k=np.array([[-0.4, 0.9], [0.2, 0.6]]),
        w_1=np.array([[2.0, -1.0], [0.5, 0.5]]),
        w_2=np.array([[1.0, 1.0], [-1.0, 2.0]]),
        b_1=None,
    )
    model = Model(d_in=2, width=2, n_layers=1, layers=[lw], use_sqrt_d=False)
    x = np.array([[1.0, -0.5, 0.2], [0.0, 0.8, -1.1]])
    out, att_mats = dense_forward(model, x, graph)
    trace = model_forward(model, x, graph)
    assert np.max(np.abs(trace.output - out)) <= 1e-12
    dense_att = att_mats[0]
    for e, (i, j) in enumerate(graph.edge_list()):
        assert abs(trace.layers[0].att[e] - dense_att[i, j]) <= 1e-12


def test_model_forward_one_layer_reduces_to_layer_forward():
    rng = np.random.default_rng(11)
    graph = random_graph(10, 3, seed=1)
    lw = LayerWeights(*(rng.standard_normal((4, 4)) for _ in range(5)))
    model = Model(d_in=4, width=4, n_layers=1, layers=[lw], use_sqrt_d=False)
    x = rng.standard_normal((4, 10))
    t_model = model_forward(model, x, graph)
    t_layer = layer_forward(lw, x, graph)
    assert np.array_equal(t_model.output, t_layer.h_out)
    assert np.array_equal(t_model.layers[0].att, t_layer.att)


def test_identity_model_two_nodes_hand_oracle():
    # Full graph on 2 nodes, identity weights, no bias. Scores are
    # x_j . x_i, pooling averages with those softmax weights, then
    # ReLU and identity again. Small enough to write out by hand.
    graph = full_graph(2)
    model = _identity_model(2)
    x = np.array([[1.0, 0.0], [0.0, 2.0]])
    s00, s01 = 1.0, 0.0          # scores for node 0: x_0.x_0, x_1.x_0
    s10, s11 = 0.0, 4.0          # node 1
    a00 = np.exp(s00) / (np.exp(s00) + np.exp(s01))
    a11 = np.exp(s11) / (np.exp(s10) + np.exp(s11))
    pooled = np.array(
        [
            [a00 * 1.0 + (1 - a00) * 0.0, (1 - a11) * 1.0 + a11 * 0.0],
            [a00 * 0.0 + (1 - a00) * 2.0, (1 - a11) * 0.0 + a11 * 2.0],
        ]
    )
    want = np.maximum(pooled, 0.0)
    trace = model_forward(model, x, graph)
    assert np.max(np.abs(trace.output - want)) <= 1e-15


def test_trace_attention_rows_sum_to_one():
    model, sample = random_model(6, 12, 3, seed=5, target_beta=2.0)
    graph = random_graph(50, 6, seed=7)
    trace = model_forward(model, sample(50, 9), graph)
    for t in trace.layers:
        assert np.all(t.att > 0.0)
        assert np.all(t.att <= 1.0)
        sums = np.add.reduceat(t.att, graph.indptr[:-1])
        assert np.max(np.abs(sums - 1.0)) <= ROW_SUM_TOL


def test_forward_matches_dense_oracle_many_seeds():
    # Quick sweep over shapes, bias, and score scaling; the full
    # 200-instance run lives in the acceptance suite.
    worst = 0.0
    for seed in range(ORACLE_TRIALS):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, ORACLE_N_CAP + 1))
        model, sample = random_model(
            int(rng.integers(2, 9)),
            int(rng.integers(2, 17)),
            int(rng.integers(1, 4)),
            seed=seed,
            target_beta=2.0,
            use_sqrt_d=bool(seed % 3 == 0),
            with_bias=bool(seed % 2),
        )
        graph = random_graph(n, int(rng.integers(1, 9)), seed=seed + 1)
        x = sample(n, seed + 2)
        out, _ = dense_forward(model, x, graph)
        trace = model_forward(model, x, graph)
        worst = max(worst, float(np.max(np.abs(trace.output - out))))
    assert worst <= ORACLE_TOL


def test_node_permutation_equivariance():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        n = 30
        model, sample = random_model(5, 9, 2, seed=seed, with_bias=True)
        graph = random_graph(n, 4, seed=seed)
        x = sample(n, seed + 50)
        perm = rng.permutation(n)
        inv = np.argsort(perm)
        pedges = [(int(inv[i]), int(inv[j])) for i, j in graph.edge_list()]
        pgraph = AttentionGraph(n, pedges)
        base = model_forward(model, x, graph).output
        permuted = model_forward(model, x[:, perm], pgraph).output
        assert np.max(np.abs(permuted - base[:, perm])) <= 1e-10


def test_ffn_block_is_beta_squared_lipschitz():
    beta = 2.0
    model, _ = random_model(8, 16, 1, seed=21, target_beta=beta, with_bias=True)
    lw = model.layers[0]

    def ffn(u):
        return lw.w_2 @ np.maximum(lw.w_1 @ u + lw.b_1, 0.0)

    rng = np.random.default_rng(22)
    for _ in range(100):
        a = rng.standard_normal(16) * rng.uniform(0.1, 10.0)
        b = rng.standard_normal(16) * rng.uniform(0.1, 10.0)
        lhs = np.linalg.norm(ffn(a) - ffn(b))
        assert lhs <= beta**2 * np.linalg.norm(a - b) + 1e-9


def test_forward_rejects_shape_mismatches():
    model, sample = random_model(4, 6, 1, seed=0)
    graph = random_graph(8, 2, seed=0)
    with pytest.raises(ValidationError):
        model_forward(model, sample(8, 1)[:3], graph)
    with pytest.raises(ValidationError):
        model_forward(model, sample(7, 1), graph)


def test_audit_identity_weights_all_ones():
    model = _identity_model(5, n_layers=2)
    audit = audit_norms(model)
    for block in audit.operator_norms:
        for v in block.values():
            assert abs(v - 1.0) <= 1e-9
    assert abs(audit.beta_estimate - 1.0) <= 1e-9


def test_audit_scaling_homogeneity():
    model, _ = random_model(4, 7, 2, seed=13)
    base = audit_norms(model)
    for lw in model.layers:
        for _, w in lw.named():
            w *= 2.0
    doubled = audit_norms(model)
    for b0, b1 in zip(base.operator_norms, doubled.operator_norms):
        for name in b0:
            assert abs(b1[name] - 2.0 * b0[name]) <= 1e-6 * b1[name]


def test_audit_matches_svd_oracle():
    model, sample = random_model(6, 10, 2, seed=17, target_beta=3.0)
    graph = random_graph(25, 4, seed=18)
    audit = audit_norms(model, sample(25, 19), graph)
    for lw, block in zip(model.layers, audit.operator_norms):
        for name, w in lw.named():
            _, s, _ = jacobi_svd(w, k=1)
            assert abs(block[name] - s[0]) <= 1e-6 * s[0]


def test_audit_estimates_are_maxima():
    model, sample = random_model(5, 8, 2, seed=23, feature_alpha=1.5)
    graph = random_graph(20, 3, seed=24)
    x = sample(20, 25)
    audit = audit_norms(model, x, graph)
    all_ops = [v for block in audit.operator_norms for v in block.values()]
    assert audit.beta_estimate == max(all_ops)
    trace = model_forward(model, x, graph)
    sq = max(
        float(np.max(np.linalg.norm(t.h_in, axis=0) ** 2)) for t in trace.layers
    )
    assert abs(audit.alpha_estimate - sq) <= 1e-12
    assert audit.input_norms[0]["max"] ** 2 == pytest.approx(1.5)


def test_audit_render_format():
    model, sample = random_model(4, 6, 1, seed=29)
    graph = random_graph(10, 2, seed=30)
    text = audit_norms(model, sample(10, 31), graph).render()
    lines = text.splitlines()
    assert lines[0].startswith("matrix operator norms (avg ± std): ")
    assert lines[1].startswith("layer input norms     (avg ± std): ")
    assert " ± " in lines[0]
    # Data-free audits drop the vector lines.
    bare = audit_norms(model).render()
    assert "layer input norms" not in bare


def test_audit_requires_graph_with_features():
    model, sample = random_model(4, 6, 1, seed=0)
    with pytest.raises(ValidationError):
        audit_norms(model, sample(5, 0), None)


def test_random_model_hits_target_beta():
    model, _ = random_model(8, 16, 3, seed=2, target_beta=2.0)
    audit = audit_norms(model)
    for block in audit.operator_norms:
        for v in block.values():
            assert abs(v - 2.0) <= 1e-6


def test_random_model_feature_alpha_one():
    _, sample = random_model(12, 8, 1, seed=4, feature_alpha=1.0)
    norms = np.linalg.norm(sample(200, 8), axis=0)
    assert np.max(np.abs(norms - 1.0)) <= 1e-9


def test_random_model_is_deterministic():
    a, sample_a = random_model(5, 9, 2, seed=77, target_beta=1.5, with_bias=True)
    b, sample_b = random_model(5, 9, 2, seed=77, target_beta=1.5, with_bias=True)
    for la, lb in zip(a.layers, b.layers):
        for (_, wa), (_, wb) in zip(la.named(), lb.named()):
            assert np.array_equal(wa, wb)
        assert np.array_equal(la.b_1, lb.b_1)
    assert np.array_equal(sample_a(30, 5), sample_b(30, 5))


def test_random_model_rejects_bad_arguments():
    with pytest.raises(ValidationError):
        random_model(0, 4, 1, seed=0)
    with pytest.raises(ValidationError):
        random_model(4, 4, 1, seed=0, target_beta=0.0)
    with pytest.raises(ValidationError):
        random_model(4, 4, 1, seed=0, feature_alpha=-1.0)


def test_sqrt_d_flag_rescales_scores():
    # With the flag on, scores shrink by 1/sqrt(width); verify against
    # an explicit manual softmax on one node's neighborhood.
    graph = AttentionGraph(3, [(0, 0), (0, 1), (0, 2), (1, 1), (2, 2)])
    rng = np.random.default_rng(41)
    lw = LayerWeights(*(rng.standard_normal((4, 4)) for _ in range(5)))
    model = Model(d_in=4, width=4, n_layers=1, layers=[lw], use_sqrt_d=True)
    x = rng.standard_normal((4, 3))
    trace = model_forward(model, x, graph)
    q = lw.w_q @ x
    k = lw.w_k @ x
    scores = np.array([k[:, j] @ q[:, 0] for j in range(3)]) / 2.0
    e = np.exp(scores - scores.max())
    assert np.max(np.abs(trace.layers[0].att[:3] - e / e.sum())) <= 1e-12
    assert operator_norm(lw.w_q, tol=1e-6) > 0.0

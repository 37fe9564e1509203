"""Dimension schedule, sketch statistics, and attention-map compression."""

from __future__ import annotations

import math

import numpy as np
import pytest

from gtcompress.errors import ValidationError
from gtcompress.harness import random_graph
from gtcompress.jlt import (
    compress_attention_jlt,
    identity_map,
    jl_dim,
    sample_jl,
    verify_dot_preservation,
)
from gtcompress.transformer import model_forward, random_model

MC_SEEDS = 20
PAIR_DIM = 300


def test_jl_dim_formula_arithmetic():
    # ceil(1 * ln(22026) / 0.25^2); ln(22026) = 9.99988, so 160.
    assert jl_dim(22026, eps=0.25, c=1.0) == 160
    assert jl_dim(1000, eps=0.25, c=8.0) == math.ceil(8.0 * math.log(1000) / 0.0625)


def test_jl_dim_quadruples_when_eps_halves():
    # Before clamping; ceil() may shave up to 3 off the exact factor 4.
    for n, eps in ((1000, 0.4), (50, 0.3), (10**6, 0.2)):
        d1 = jl_dim(n, eps=eps, c=8.0)
        d2 = jl_dim(n, eps=eps / 2.0, c=8.0)
        assert 4 * d1 - 3 <= d2 <= 4 * d1


def test_jl_dim_clamps_to_d_max():
    assert jl_dim(10**6, eps=0.01, c=8.0, d_max=64) == 64
    assert jl_dim(2, eps=0.49, c=0.001, d_max=64) == 1


def test_jl_dim_rejects_eps_outside_window():
    # The distortion bound is stated for 0 < eps < 1/2; outside that
    # the schedule is rejected, not clamped.
    for bad in (0.0, 0.5, 1.0, -0.1):
        with pytest.raises(ValidationError):
            jl_dim(100, eps=bad)
    with pytest.raises(ValidationError):
        jl_dim(0, eps=0.25)
    with pytest.raises(ValidationError):
        jl_dim(100, eps=0.25, c=0.0)


def test_sample_jl_deterministic():
    a = sample_jl(16, 32, seed=5)
    b = sample_jl(16, 32, seed=5)
    assert np.array_equal(a.m, b.m)
    assert a.seed == 5
    assert a.distribution == "gaussian"
    assert a.d == 16
    assert not np.array_equal(a.m, sample_jl(16, 32, seed=6).m)


def test_sample_jl_column_norm_expectation():
    # Entries N(0, 1/d), so each column's squared norm has mean 1.
    jl = sample_jl(64, 1000, seed=11)
    mean_sq = float(np.mean(np.sum(jl.m**2, axis=0)))
    assert 0.9 <= mean_sq <= 1.1


def test_identity_map_preserves_exactly():
    jl = identity_map(12)
    rng = np.random.default_rng(3)
    pairs = [(rng.standard_normal(12) * 0.2, rng.standard_normal(12) * 0.2)
             for _ in range(50)]
    assert verify_dot_preservation(jl, pairs, gamma=16.0) == 0.0
    assert jl.distribution == "identity"


def test_dot_preservation_zero_pairs():
    jl = sample_jl(8, 20, seed=0)
    z = np.zeros(20)
    assert verify_dot_preservation(jl, [(z, z)] * 5, gamma=1.0) == 0.0


def test_dot_preservation_unit_pairs_high_probability():
    # d = ceil(8 ln(1000) / 0.5^2) = 222 targets deviation <= 0.5 * gamma
    # for 1000 pairs; a with-high-probability bound, so demand 19/20.
    d = jl_dim(1000, eps=0.5 - 1e-12, c=8.0)
    assert d == 222
    hits = 0
    for seed in range(MC_SEEDS):
        rng = np.random.default_rng(1000 + seed)
        x = rng.standard_normal((1000, PAIR_DIM))
        y = rng.standard_normal((1000, PAIR_DIM))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        y /= np.linalg.norm(y, axis=1, keepdims=True)
        jl = sample_jl(d, PAIR_DIM, seed=seed)
        dev = verify_dot_preservation(jl, zip(x, y), gamma=1.0)
        if dev <= 0.5:
            hits += 1
    assert hits >= int(0.95 * MC_SEEDS)


def test_dot_preservation_shrinks_with_d():
    meds = {}
    for d in (64, 256):
        devs = []
        for seed in range(MC_SEEDS):
            rng = np.random.default_rng(seed)
            x = rng.standard_normal((200, PAIR_DIM))
            y = rng.standard_normal((200, PAIR_DIM))
            x /= np.linalg.norm(x, axis=1, keepdims=True)
            y /= np.linalg.norm(y, axis=1, keepdims=True)
            jl = sample_jl(d, PAIR_DIM, seed=3000 + seed)
            devs.append(verify_dot_preservation(jl, zip(x, y), gamma=1.0))
        meds[d] = float(np.median(devs))
    assert meds[256] <= 0.6 * meds[64]


def test_dot_preservation_rejects_norm_violation():
    jl = sample_jl(8, 10, seed=0)
    big = np.full(10, 2.0)
    with pytest.raises(ValidationError):
        verify_dot_preservation(jl, [(big, big)], gamma=1.0)
    with pytest.raises(ValidationError):
        verify_dot_preservation(jl, [], gamma=0.0)


def test_compress_identity_debug_bit_identical():
    model, sample = random_model(8, 16, 3, seed=1, target_beta=2.0)
    graph = random_graph(40, 5, seed=2)
    x = sample(40, 3)
    comp = compress_attention_jlt(model, d=16, seed=9, debug_identity=True)
    ref = model_forward(model, x, graph)
    got = model_forward(comp, x, graph)
    assert np.array_equal(got.output, ref.output)
    for tr, tc in zip(ref.layers, got.layers):
        assert np.array_equal(tr.att, tc.att)


def test_compress_shares_value_and_ffn_weights():
    model, _ = random_model(6, 12, 2, seed=4)
    comp = compress_attention_jlt(model, d=4, seed=0)
    assert comp.d == 4
    assert comp.u_out is None
    for lw, cw in zip(model.layers, comp.layers):
        assert cw.w_q.shape[0] == 4
        assert cw.w_k.shape[0] == 4
        assert np.array_equal(cw.w_v, lw.w_v)
        assert np.array_equal(cw.w_1, lw.w_1)
        assert np.array_equal(cw.w_2, lw.w_2)


def test_compress_is_deterministic_and_layer_seeded():
    model, _ = random_model(6, 12, 2, seed=4)
    a = compress_attention_jlt(model, d=4, seed=7)
    b = compress_attention_jlt(model, d=4, seed=7)
    for la, lb in zip(a.layers, b.layers):
        assert np.array_equal(la.w_q, lb.w_q)
    # Per-layer offset: layer 1 of seed 7 equals layer 0 of seed 8.
    c = compress_attention_jlt(model, d=4, seed=8)
    expect = sample_jl(4, 12, seed=8).m @ model.layers[1].w_q
    assert np.allclose(a.layers[1].w_q, expect, atol=0.0)
    assert np.allclose(c.layers[0].w_q, sample_jl(4, 12, 8).m @ model.layers[0].w_q)


def test_compressed_attention_rows_still_sum_to_one():
    model, sample = random_model(6, 16, 2, seed=13, target_beta=2.0)
    graph = random_graph(60, 6, seed=14)
    comp = compress_attention_jlt(model, d=4, seed=15)
    trace = model_forward(comp, sample(60, 16), graph)
    for t in trace.layers:
        sums = np.add.reduceat(t.att, graph.indptr[:-1])
        assert np.max(np.abs(sums - 1.0)) <= 1e-12


def _jlt_errors(model, x, graph, d, seed):
    ref = model_forward(model, x, graph)
    got = model_forward(compress_attention_jlt(model, d, seed), x, graph)
    out_err = float(np.max(np.linalg.norm(got.output - ref.output, axis=0)))
    log_ratio = 0.0
    for tr, tc in zip(ref.layers, got.layers):
        log_ratio = max(log_ratio, float(np.max(np.abs(np.log(tr.att / tc.att)))))
    return out_err, log_ratio


def test_error_medians_shrink_with_d():
    # Scaled-down version of the d-sweep; the full protocol runs in the
    # acceptance suite.
    model, sample = random_model(8, 64, 2, seed=20, target_beta=2.0)
    graph = random_graph(120, 6, seed=21)
    x = sample(120, 22)
    stats = {}
    for d in (8, 64):
        rows = [_jlt_errors(model, x, graph, d, seed) for seed in range(5)]
        stats[d] = (
            float(np.median([r[0] for r in rows])),
            float(np.median([r[1] for r in rows])),
        )
    assert stats[64][0] <= stats[8][0]
    assert stats[64][1] <= stats[8][1]


def test_jl_dim_dedup_never_larger():
    # Fewer unique columns can only shrink the schedule.
    for kappa, n in ((10, 1000), (2, 50), (999, 1000)):
        assert jl_dim(kappa, eps=0.3) <= jl_dim(n, eps=0.3)


def test_compress_rejects_bad_d():
    model, _ = random_model(4, 8, 1, seed=0)
    with pytest.raises(ValidationError):
        compress_attention_jlt(model, d=0, seed=0)
    with pytest.raises(ValidationError):
        compress_attention_jlt(model, d=9, seed=0)
    with pytest.raises(ValidationError):
        compress_attention_jlt(model, d=4, seed=0, debug_identity=True)

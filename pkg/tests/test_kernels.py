"""Compiled and fallback attention kernels must agree bit-for-bit-ish."""

from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from gtcompress import backend
from gtcompress.harness import random_graph

# The two paths accumulate segment sums in different orders, so agree
# to a few ulps, not bit-exactly.
PARITY_SEEDS = 25
PARITY_TOL = 1e-14


def _edge_inputs(seed, n=40, width=8, avg_degree=5):
    rng = np.random.default_rng(seed)
    graph = random_graph(n, avg_degree, seed=seed)
    q = np.ascontiguousarray(rng.standard_normal((n, width)))
    k = np.ascontiguousarray(rng.standard_normal((n, width)))
    v = np.ascontiguousarray(rng.standard_normal((n, width)))
    return graph, q, k, v


def test_backend_name_is_known():
    assert backend.backend_name() in ("compiled", "fallback")


def test_compiled_extension_present_in_this_build():
    # The build ships the extension; if this trips, setup.py regressed.
    assert backend.have_compiled()


def test_parity_compiled_vs_fallback():
    if not backend.have_compiled():
        pytest.skip("no compiled extension in this environment")
    worst = 0.0
    for seed in range(PARITY_SEEDS):
        graph, q, k, v = _edge_inputs(seed)
        scale = 1.0 if seed % 2 else 0.5
        pc, ac = backend.compiled_edge_attention(
            q, k, v, graph.indptr, graph.targets, scale
        )
        pf, af = backend.fallback_edge_attention(
            q, k, v, graph.indptr, graph.targets, scale
        )
        worst = max(worst, float(np.max(np.abs(pc - pf))))
        worst = max(worst, float(np.max(np.abs(ac - af))))
    assert worst <= PARITY_TOL


def test_fallback_rows_sum_to_one():
    graph, q, k, v = _edge_inputs(99)
    _, att = backend.fallback_edge_attention(
        q, k, v, graph.indptr, graph.targets, 1.0
    )
    sums = np.add.reduceat(att, graph.indptr[:-1])
    assert np.max(np.abs(sums - 1.0)) <= 1e-12


def test_fallback_survives_huge_scores():
    # Raw exp would overflow at 1e4-scale scores; max subtraction must
    # keep everything finite.
    graph, q, k, v = _edge_inputs(7, n=10, width=4)
    pooled, att = backend.fallback_edge_attention(
        q * 100.0, k * 100.0, v, graph.indptr, graph.targets, 1.0
    )
    assert np.all(np.isfinite(pooled))
    assert np.all(np.isfinite(att))
    sums = np.add.reduceat(att, graph.indptr[:-1])
    assert np.max(np.abs(sums - 1.0)) <= 1e-12


def test_force_fallback_env_selects_numpy_path():
    code = (
        "from gtcompress import backend; "
        "print(backend.backend_name())"
    )
    env = dict(os.environ, GTC_FORCE_FALLBACK="1")
    out = subprocess.run(
        [sys.executable, "-c", code], env=env, capture_output=True, text=True
    )
    assert out.stdout.strip() == "fallback"


def test_selected_backend_matches_fallback_through_dispatch():
    graph, q, k, v = _edge_inputs(3)
    p1, a1 = backend.edge_attention(q, k, v, graph.indptr, graph.targets, 1.0)
    p2, a2 = backend.fallback_edge_attention(
        q, k, v, graph.indptr, graph.targets, 1.0
    )
    assert np.max(np.abs(p1 - p2)) <= PARITY_TOL
    assert np.max(np.abs(a1 - a2)) <= PARITY_TOL

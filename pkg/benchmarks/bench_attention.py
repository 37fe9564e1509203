"""Compiled vs numpy attention kernel timing.

Builds random CSR graphs at a few sizes, runs both kernel paths on the
same inputs, and prints best-of-N wall times plus the max output
difference (the two paths reduce segments in different orders, so a
few ulps of disagreement is expected).

Usage:
    python benchmarks/bench_attention.py
    python benchmarks/bench_attention.py --sizes 2000,20000 --width 128
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from gtcompress import backend
from gtcompress.harness import random_graph


def _time_best(fn, args, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_one(n: int, width: int, avg_degree: int, repeats: int, seed: int) -> dict:
    graph = random_graph(n, avg_degree, seed)
    rng = np.random.default_rng(seed + 1)
    q = rng.standard_normal((n, width))
    k = rng.standard_normal((n, width))
    v = rng.standard_normal((n, width))
    args = (q, k, v, graph.indptr, graph.targets, 1.0)
    row = {"n": n, "edges": graph.m}
    pooled_fb, att_fb = backend.fallback_edge_attention(*args)
    row["fallback_s"] = _time_best(backend.fallback_edge_attention, args, repeats)
    if backend.have_compiled():
        pooled_c, att_c = backend.compiled_edge_attention(*args)
        row["compiled_s"] = _time_best(backend.compiled_edge_attention, args, repeats)
        row["max_diff"] = max(
            float(np.max(np.abs(pooled_c - pooled_fb))),
            float(np.max(np.abs(att_c - att_fb))),
        )
    return row


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="1000,5000,20000,50000",
                    help="comma list of node counts")
    ap.add_argument("--width", type=int, default=64)
    ap.add_argument("--degree", type=int, default=16, help="average out-degree")
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    sizes = [int(s) for s in args.sizes.split(",") if s]
    print(f"active backend: {backend.backend_name()}  "
          f"(compiled available: {backend.have_compiled()})")
    header = f"{'n':>8} {'edges':>9} {'fallback':>10} {'compiled':>10} {'speedup':>8} {'max diff':>9}"
    print(header)
    print("-" * len(header))
    for n in sizes:
        row = bench_one(n, args.width, args.degree, args.repeats, args.seed)
        fb = row["fallback_s"]
        if "compiled_s" in row:
            c = row["compiled_s"]
            print(f"{row['n']:>8} {row['edges']:>9} {fb * 1e3:>8.2f}ms "
                  f"{c * 1e3:>8.2f}ms {fb / c:>7.2f}x {row['max_diff']:>9.1e}")
        else:
            print(f"{row['n']:>8} {row['edges']:>9} {fb * 1e3:>8.2f}ms "
                  f"{'-':>10} {'-':>8} {'-':>9}")


if __name__ == "__main__":
    main()

"""Compare the compiled and pure-Python graph kernels.

Builds the same similarity graph with both backends over random unit
vectors, runs a full range-query pass, and reports build/query wall time
plus recall against the brute-force pair oracle.

    python benchmarks/bench_hnsw.py [--n 10000] [--dim 32] [--threshold 0.5]
"""

import argparse
import time

import numpy as np

from tabxcheck.encoding import EmbeddingMatrix
from tabxcheck.filtering import FilterParams, exact_pairs
from tabxcheck.hnsw import HnswGraph, get_kernel


def run_backend(backend, rows, params, exact_ids):
    t0 = time.perf_counter()
    graph = HnswGraph(
        rows,
        m=params.m_neighbors,
        ef_construction=params.ef_construction,
        seed=params.seed,
        backend=backend,
    )
    t_build = time.perf_counter() - t0

    rows64 = rows.astype(np.float64)
    found = set()
    t0 = time.perf_counter()
    for i in range(len(rows)):
        ids, _ = graph.query(rows[i], params.ef_search)
        for j in ids.tolist():
            if j == i:
                continue
            if float(rows64[i] @ rows64[j]) > params.threshold:
                found.add((min(i, j), max(i, j)))
    t_query = time.perf_counter() - t0

    union = len(found | exact_ids) or 1
    jaccard = len(found & exact_ids) / union
    recall = len(found & exact_ids) / (len(exact_ids) or 1)
    return t_build, t_query, recall, jaccard


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=10_000)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--threshold", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    rows = rng.standard_normal((args.n, args.dim)).astype(np.float32)
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    params = FilterParams(threshold=args.threshold)

    emb = EmbeddingMatrix(mention_ids=np.arange(args.n), rows=rows)
    t0 = time.perf_counter()
    exact = exact_pairs(emb, args.threshold)
    t_exact = time.perf_counter() - t0
    print(
        f"n={args.n} dim={args.dim} t={args.threshold}: "
        f"{len(exact)} true pairs (brute force {t_exact:.2f}s)\n"
    )

    header = f"{'backend':<8} {'build (s)':>10} {'query (s)':>10} {'recall':>8} {'jaccard':>8}"
    print(header)
    print("-" * len(header))
    for backend in ("native", "pure"):
        try:
            get_kernel(backend)
        except (ImportError, ValueError):
            print(f"{backend:<8} {'unavailable':>10}")
            continue
        t_build, t_query, recall, jaccard = run_backend(
            backend, rows, params, exact.ids()
        )
        print(
            f"{backend:<8} {t_build:>10.2f} {t_query:>10.2f} "
            f"{recall:>8.4f} {jaccard:>8.4f}"
        )


if __name__ == "__main__":
    main()

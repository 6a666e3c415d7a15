"""Candidate mention-pair pruning by embedding similarity.

Pairs whose cosine exceeds the threshold survive; everything else is pruned
before the expensive classification stage. The similarity index is the
layered proximity graph from `hnsw`; `exact_pairs` is the brute-force
O(n^2) oracle used both as a fallback (`exact_mode`) and in recall tests.

Reported similarities are always recomputed in float64 from the embedding
rows, so thresholding is exact regardless of which index produced the
candidates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .encoding import EmbeddingMatrix
from .hnsw import HnswGraph


class DimMismatch(ValueError):
    """Query/index embedding dimensions disagree."""


@dataclass(frozen=True)
class FilterParams:
    threshold: float = 0.5
    m_neighbors: int = 16
    ef_construction: int = 200
    ef_search: int = 128
    exact_mode: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if not -1.0 < self.threshold < 1.0:
            raise ValueError("threshold must be in (-1, 1)")
        if min(self.m_neighbors, self.ef_construction, self.ef_search) < 1:
            raise ValueError("index parameters must be positive")


@dataclass
class CandidatePairSet:
    """Unordered candidate pairs (i < j, mention ids) with similarities."""

    pairs: dict[tuple[int, int], float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.pairs)

    def ids(self) -> set[tuple[int, int]]:
        return set(self.pairs)

    def add(self, i: int, j: int, sim: float) -> None:
        if i == j:
            raise ValueError("self-pair")
        key = (i, j) if i < j else (j, i)
        self.pairs[key] = sim

    def restricted(self, threshold: float) -> "CandidatePairSet":
        return CandidatePairSet(
            pairs={k: s for k, s in self.pairs.items() if s > threshold}
        )

    def jaccard(self, other: "CandidatePairSet") -> float:
        a, b = self.ids(), other.ids()
        if not a and not b:
            return 1.0
        return len(a & b) / len(a | b)


class SimilarityIndex:
    """Range-queryable similarity index over an embedding matrix."""

    def __init__(self, emb: EmbeddingMatrix, params: FilterParams):
        self.emb = emb
        self.params = params
        self.rows64 = emb.rows.astype(np.float64)
        self.graph: HnswGraph | None = None
        if not params.exact_mode and len(emb) > 1:
            self.graph = HnswGraph(
                emb.rows,
                m=params.m_neighbors,
                ef_construction=params.ef_construction,
                seed=params.seed,
            )

    def candidate_neighbors(self, row_idx: int) -> np.ndarray:
        """Candidate row indices for one query row (self not excluded)."""
        if len(self.emb) <= 1:
            return np.empty(0, dtype=np.int32)
        if self.graph is None:
            return np.arange(len(self.emb), dtype=np.int32)
        ids, _ = self.graph.query(self.emb.rows[row_idx], self.params.ef_search)
        return ids

    def range_query(self, row_idx: int, threshold: float) -> tuple[np.ndarray, np.ndarray]:
        """All candidate ids with exact float64 cosine > threshold."""
        cand = self.candidate_neighbors(row_idx)
        cand = cand[cand != row_idx]
        if cand.size == 0:
            return cand, np.empty(0, dtype=np.float64)
        sims = self.rows64[cand] @ self.rows64[row_idx]
        keep = sims > threshold
        return cand[keep], sims[keep]


def build_index(emb: EmbeddingMatrix, params: FilterParams | None = None) -> SimilarityIndex:
    if len(emb) < 1:
        raise ValueError("need at least one embedding")
    if emb.rows.ndim != 2:
        raise DimMismatch("embedding rows must be a matrix")
    return SimilarityIndex(emb, params or FilterParams())


def query_pairs(index: SimilarityIndex, params: FilterParams | None = None) -> CandidatePairSet:
    """All unordered pairs above the threshold, deduplicated, ids canonical."""
    p = params or index.params
    out = CandidatePairSet()
    ids = index.emb.mention_ids
    for row in range(len(index.emb)):
        cand, sims = index.range_query(row, p.threshold)
        for c, s in zip(cand.tolist(), sims.tolist()):
            out.add(int(ids[row]), int(ids[c]), float(s))
    return out


def exact_pairs(
    emb: EmbeddingMatrix, threshold: float, block: int = 1024
) -> CandidatePairSet:
    """Brute-force pairwise cosine over all rows; the ground-truth oracle."""
    out = CandidatePairSet()
    n = len(emb)
    if n < 2:
        return out
    r = emb.rows.astype(np.float64)
    ids = emb.mention_ids
    for start in range(0, n, block):
        stop = min(start + block, n)
        sims = r[start:stop] @ r.T
        for local, row in enumerate(range(start, stop)):
            cols = np.nonzero(sims[local, row + 1 :] > threshold)[0] + row + 1
            for c in cols.tolist():
                out.add(int(ids[row]), int(ids[c]), float(sims[local, c]))
    return out


def sweep_thresholds(
    emb: EmbeddingMatrix,
    gold_pairs: set[tuple[int, int]],
    thresholds: list[float] | None = None,
    params: FilterParams | None = None,
) -> list[dict]:
    """Recall / surviving-pair counts as the threshold rises.

    One candidate superset is computed at the lowest threshold and then
    re-filtered per threshold, so both curves are monotone by construction.
    """
    ts = sorted(thresholds if thresholds is not None else [x / 10 for x in range(1, 10)])
    p = params or FilterParams()
    # a floor at or below -1 admits every pair; only the exact path can honor it
    if p.exact_mode or len(emb) <= 2048 or ts[0] <= -1.0:
        base = exact_pairs(emb, ts[0])
    else:
        base_params = replace(p, threshold=ts[0])
        base = query_pairs(build_index(emb, base_params), base_params)
    rows = []
    for t in ts:
        kept = base.restricted(t)
        inter = len(gold_pairs & kept.ids()) if gold_pairs else 0
        recall = inter / len(gold_pairs) if gold_pairs else 1.0
        rows.append(
            {"threshold": t, "recall": recall, "pairs": len(kept), "gold_hits": inter}
        )
    return rows

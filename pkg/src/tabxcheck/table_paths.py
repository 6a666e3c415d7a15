"""Pretraining sequence construction over the table relevance graph.

Tables that repeat the same numbers should sit next to each other in a
pretraining sequence, so a model learning next-token prediction is pushed
to copy values across table boundaries. Tables become nodes; edge weights
are the ratio of multiset-equal values to the combined mention counts. The
ordering problem is a maximum-weight Hamiltonian path, approximated
greedily; the exact solver (small graphs only) and the reading-order
baseline exist for comparison.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .documents import Document, NumericValue, linearize_table
from .encoding import SimpleTokenizer


class EmptyList(ValueError):
    """Relevance is undefined for an empty mention list."""


class TooLarge(ValueError):
    """Exact path search is exponential; refuse big graphs."""


@dataclass(frozen=True)
class RelevanceGraph:
    table_ids: tuple[str, ...]
    # adjacency over node indices; only weight > 0 edges are stored
    edges: dict[tuple[int, int], float]

    def __post_init__(self) -> None:
        for (i, j), w in self.edges.items():
            if i == j:
                raise ValueError("self-loop")
            if i > j:
                raise ValueError("edges must be stored with i < j")
            if not 0.0 < w <= 0.5:
                raise ValueError(f"edge weight {w} outside (0, 0.5]")

    @property
    def n(self) -> int:
        return len(self.table_ids)

    def weight(self, i: int, j: int) -> float:
        if i == j:
            return 0.0
        key = (i, j) if i < j else (j, i)
        return self.edges.get(key, 0.0)

    def neighbors(self, i: int) -> list[tuple[int, float]]:
        out = []
        for (a, b), w in self.edges.items():
            if a == i:
                out.append((b, w))
            elif b == i:
                out.append((a, w))
        return sorted(out)

    def degree(self, i: int) -> int:
        return sum(1 for (a, b) in self.edges if a == i or b == i)

    def degree_map(self) -> dict[int, int]:
        return {i: self.degree(i) for i in range(self.n)}


@dataclass(frozen=True)
class PretrainingPath:
    table_ids: tuple[str, ...]
    bridges: tuple[int, ...]  # path positions reached by a zero-weight jump
    total_weight: float


@dataclass(frozen=True)
class PretrainingChunk:
    text: str
    table_ids: tuple[str, ...]
    token_len: int


def relevance_score(values_i: list[NumericValue], values_j: list[NumericValue]) -> float:
    """Matched-value ratio of two mention lists.

    Matches count multiset overlap (min of per-value counts), so repeated
    values are not double counted; the denominator is the summed list
    lengths, giving 0.5 for identical lists.
    """
    if not values_i or not values_j:
        raise EmptyList("relevance needs nonempty mention lists")
    ci, cj = Counter(values_i), Counter(values_j)
    equal = sum(min(k, cj[v]) for v, k in ci.items())
    return equal / (len(values_i) + len(values_j))


def build_graph(d: Document) -> RelevanceGraph:
    """Relevance graph over the document's tables; edges only where the
    score is positive."""
    table_ids = tuple(t.table_id for t in d.tables)
    values: list[list[NumericValue]] = [[] for _ in table_ids]
    index = {tid: k for k, tid in enumerate(table_ids)}
    for m in d.mentions:
        values[index[m.table_id]].append(m.value)
    edges: dict[tuple[int, int], float] = {}
    for i in range(len(table_ids)):
        if not values[i]:
            continue
        for j in range(i + 1, len(table_ids)):
            if not values[j]:
                continue
            w = relevance_score(values[i], values[j])
            if w > 0.0:
                edges[(i, j)] = w
    return RelevanceGraph(table_ids=table_ids, edges=edges)


def greedy_max_path(g: RelevanceGraph, seed: int = 0) -> PretrainingPath:
    """Greedy traversal visiting every node exactly once.

    Starts at the minimum-degree node (ties to the lowest id); repeatedly
    extends to the unvisited neighbor with the highest edge weight (ties to
    the lowest id). At a dead end, jumps over a zero-weight bridge to a
    seeded-random choice among the minimum-degree unvisited nodes.
    """
    if g.n < 1:
        raise ValueError("empty graph")
    rng = np.random.default_rng([seed, 0xC4A9])
    degree = g.degree_map()
    adjacency = {i: g.neighbors(i) for i in range(g.n)}
    unvisited = set(range(g.n))
    order: list[int] = []
    bridges: list[int] = []
    total = 0.0
    first = True
    while unvisited:
        candidates = sorted(unvisited, key=lambda i: (degree[i], i))
        if first:
            cur = candidates[0]
            first = False
        else:
            min_deg = degree[candidates[0]]
            pool = [i for i in candidates if degree[i] == min_deg]
            cur = int(pool[int(rng.integers(0, len(pool)))])
            bridges.append(len(order))
        order.append(cur)
        unvisited.discard(cur)
        while True:
            options = [(w, j) for j, w in adjacency[cur] if j in unvisited]
            if not options:
                break
            options.sort(key=lambda t: (-t[0], t[1]))
            w, cur = options[0]
            total += w
            order.append(cur)
            unvisited.discard(cur)
    return PretrainingPath(
        table_ids=tuple(g.table_ids[i] for i in order),
        bridges=tuple(bridges),
        total_weight=total,
    )


def reading_order_path(d: Document, g: RelevanceGraph | None = None) -> PretrainingPath:
    """Baseline: tables in document reading order, weight summed over the
    edges that happen to be adjacent."""
    graph = g or build_graph(d)
    total = 0.0
    bridges = []
    for k in range(1, graph.n):
        w = graph.weight(k - 1, k)
        if w > 0:
            total += w
        else:
            bridges.append(k)
    return PretrainingPath(
        table_ids=graph.table_ids, bridges=tuple(bridges), total_weight=total
    )


def path_weight(g: RelevanceGraph, order: list[int]) -> float:
    return sum(g.weight(order[k - 1], order[k]) for k in range(1, len(order)))


def exact_max_path(g: RelevanceGraph, max_nodes: int = 10) -> PretrainingPath:
    """True maximum-weight Hamiltonian path by bitmask DP; missing edges act
    as zero-weight bridges, so the path always covers every node."""
    n = g.n
    if n > max_nodes:
        raise TooLarge(f"{n} nodes exceeds the exact-search limit {max_nodes}")
    if n == 0:
        raise ValueError("empty graph")
    w = np.zeros((n, n))
    for (i, j), weight in g.edges.items():
        w[i, j] = w[j, i] = weight
    size = 1 << n
    dp = np.full((size, n), -1.0)
    parent = np.full((size, n), -1, dtype=np.int64)
    for i in range(n):
        dp[1 << i, i] = 0.0
    for mask in range(size):
        for last in range(n):
            cur = dp[mask, last]
            if cur < 0.0:
                continue
            for nxt in range(n):
                if mask & (1 << nxt):
                    continue
                nmask = mask | (1 << nxt)
                cand = cur + w[last, nxt]
                if cand > dp[nmask, nxt]:
                    dp[nmask, nxt] = cand
                    parent[nmask, nxt] = last
    full = size - 1
    last = int(np.argmax(dp[full]))
    order = [last]
    mask = full
    while parent[mask, order[-1]] >= 0:
        prev = int(parent[mask, order[-1]])
        mask ^= 1 << order[-1]
        order.append(prev)
    order.reverse()
    bridges = tuple(
        k for k in range(1, n) if g.weight(order[k - 1], order[k]) == 0.0
    )
    return PretrainingPath(
        table_ids=tuple(g.table_ids[i] for i in order),
        bridges=bridges,
        total_weight=float(dp[full, int(np.argmax(dp[full]))]),
    )


def truncate_path(
    path: PretrainingPath,
    d: Document,
    chunk_size: int,
    tokenizer: SimpleTokenizer | None = None,
) -> list[PretrainingChunk]:
    """Greedy packing of linearized tables, in path order, into chunks of at
    most `chunk_size` tokens. A table never splits across chunks unless it
    alone exceeds the budget, in which case it is hard-truncated."""
    if chunk_size <= 0:
        raise ValueError("chunk_size must be positive")
    tok = tokenizer or SimpleTokenizer()
    chunks: list[PretrainingChunk] = []
    buf_texts: list[str] = []
    buf_ids: list[str] = []
    buf_len = 0

    def flush() -> None:
        nonlocal buf_texts, buf_ids, buf_len
        if buf_ids:
            chunks.append(
                PretrainingChunk(
                    text="\n\n".join(buf_texts),
                    table_ids=tuple(buf_ids),
                    token_len=buf_len,
                )
            )
        buf_texts, buf_ids, buf_len = [], [], 0

    for tid in path.table_ids:
        text = linearize_table(d.table(tid))
        toks = tok.tokenize(text)
        if len(toks) > chunk_size:
            flush()
            chunks.append(
                PretrainingChunk(
                    text=" ".join(toks[:chunk_size]),
                    table_ids=(tid,),
                    token_len=chunk_size,
                )
            )
            continue
        if buf_len + len(toks) > chunk_size:
            flush()
        buf_texts.append(text)
        buf_ids.append(tid)
        buf_len += len(toks)
    flush()
    return chunks

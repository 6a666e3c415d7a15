"""Pure-Python kernels for the layered proximity graph.

Fallback twin of the compiled module `_hnsw_native`; same function
signatures, same algorithm, numpy for the distance blocks and heapq for the
frontier. Selected at import time by `tabxcheck.hnsw`.
"""

from __future__ import annotations

from heapq import heappop, heappush, heapreplace

import numpy as np

NATIVE = False


def make_workspace(n: int, ef_max: int):
    """No preallocated scratch needed for the Python kernels."""
    return None


def search_layer(vectors, nbr, cnt, entry_id, entry_sim, query, ef, visited, epoch, ws=None):
    """Best-first search over one layer, maximizing cosine similarity.

    Returns up to `ef` node ids with their similarities, best first.
    `visited` is an epoch-tagged int32 scratch array owned by the caller.
    """
    visited[entry_id] = epoch
    res = [(entry_sim, entry_id)]  # min-heap over kept results
    cand = [(-entry_sim, entry_id)]  # max-heap over the frontier
    while cand:
        neg_sim, cid = heappop(cand)
        if len(res) >= ef and -neg_sim < res[0][0]:
            break
        k = int(cnt[cid])
        if k == 0:
            continue
        ids = nbr[cid, :k]
        fresh = ids[visited[ids] != epoch]
        if fresh.size == 0:
            continue
        visited[fresh] = epoch
        sims = vectors[fresh] @ query
        floor = res[0][0]
        full = len(res) >= ef
        if full and sims.max() <= floor:
            continue
        for s, j in zip(sims.tolist(), fresh.tolist()):
            if not full:
                heappush(res, (s, j))
                heappush(cand, (-s, j))
                full = len(res) >= ef
                floor = res[0][0]
            elif s > floor:
                heapreplace(res, (s, j))
                heappush(cand, (-s, j))
                floor = res[0][0]
    res.sort(key=lambda t: (-t[0], t[1]))
    out_ids = np.fromiter((j for _, j in res), dtype=np.int32, count=len(res))
    out_sims = np.fromiter((s for s, _ in res), dtype=np.float32, count=len(res))
    return out_ids, out_sims


def select_neighbors(vectors, ids, sims, m):
    """Diversity-aware neighbor selection.

    Walk candidates best-first and keep one only if it is more similar to the
    query than to every neighbor already kept; stop at `m`.
    """
    k = len(ids)
    if k == 0:
        return np.empty(0, dtype=np.int32)
    if k <= m and k <= 1:
        return np.asarray(ids, dtype=np.int32)
    order = np.lexsort((ids, -np.asarray(sims)))
    vv = vectors[ids]
    cross = vv @ vv.T
    kept: list[int] = []
    for oi in order:
        oi = int(oi)
        if kept and sims[oi] <= cross[oi, kept].max():
            continue
        kept.append(oi)
        if len(kept) == m:
            break
    return np.asarray(ids, dtype=np.int32)[kept]

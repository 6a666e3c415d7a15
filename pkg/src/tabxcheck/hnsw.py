"""Layered proximity graph over unit-norm embeddings.

Graph construction and traversal order live here; the two hot kernels
(per-layer best-first search, diversity-aware neighbor selection) dispatch
to the compiled extension when it imports cleanly, else to the pure-Python
twin. `TABXCHECK_HNSW=pure|native` forces a backend.
"""

from __future__ import annotations

import math
import os
import threading

import numpy as np

from . import _hnsw_pure

_forced = os.environ.get("TABXCHECK_HNSW", "").strip().lower()
if _forced == "pure":
    _kernel = _hnsw_pure
else:
    try:
        from . import _hnsw_native as _kernel  # type: ignore[no-redef]
    except ImportError:
        if _forced == "native":
            raise
        _kernel = _hnsw_pure


def active_backend() -> str:
    return "native" if _kernel.NATIVE else "pure"


def get_kernel(name: str | None = None):
    if name in (None, ""):
        return _kernel
    if name == "pure":
        return _hnsw_pure
    if name == "native":
        from . import _hnsw_native

        return _hnsw_native
    raise ValueError(f"unknown kernel backend {name!r}")


class HnswGraph:
    """Batch-built similarity graph supporting range queries by cosine.

    Construction is deterministic under (vectors, seed). After construction
    the graph arrays are read-only; search scratch is thread-local, so
    concurrent queries from multiple threads are safe.
    """

    def __init__(
        self,
        vectors: np.ndarray,
        m: int = 16,
        ef_construction: int = 200,
        seed: int = 0,
        backend: str | None = None,
    ):
        self.kernel = get_kernel(backend)
        v = np.ascontiguousarray(vectors, dtype=np.float32)
        if v.ndim != 2:
            raise ValueError("vectors must be 2-d")
        self.vectors = v
        self.n, self.dim = v.shape
        self.m = int(m)
        self.ef_construction = int(ef_construction)
        self.seed = int(seed)
        self._tls = threading.local()

        rng = np.random.default_rng([seed, 0x4715])
        ml = 1.0 / math.log(self.m) if self.m > 1 else 1.0
        u = rng.random(self.n)
        self.levels = np.minimum(
            np.floor(-np.log(np.maximum(u, 1e-300)) * ml).astype(np.int64), 48
        )
        self.max_level = int(self.levels.max(initial=0)) if self.n else 0
        self.caps = [2 * self.m] + [self.m] * self.max_level
        self.nbr = [
            np.zeros((self.n, cap), dtype=np.int32) for cap in self.caps
        ]
        self.cnt = [np.zeros(self.n, dtype=np.int32) for _ in self.caps]
        self.entry = -1
        self.top = -1
        self._ef_max = max(self.ef_construction, 512)
        self._build()

    def _scratch(self):
        # per-thread scratch keeps post-build queries safely parallel
        state = getattr(self._tls, "state", None)
        if state is None:
            state = {
                "visited": np.zeros(self.n, dtype=np.int32),
                "epoch": 0,
                "ws": self.kernel.make_workspace(self.n, self._ef_max),
            }
            self._tls.state = state
        return state

    def _search(self, layer: int, entry: int, entry_sim: float, query: np.ndarray, ef: int):
        state = self._scratch()
        state["epoch"] += 1
        return self.kernel.search_layer(
            self.vectors,
            self.nbr[layer],
            self.cnt[layer],
            entry,
            entry_sim,
            query,
            ef,
            state["visited"],
            state["epoch"],
            state["ws"],
        )

    def _descend(self, query: np.ndarray, stop_layer: int) -> tuple[int, float]:
        cur = self.entry
        cur_sim = float(self.vectors[cur] @ query)
        for layer in range(self.top, stop_layer, -1):
            ids, sims = self._search(layer, cur, cur_sim, query, 1)
            cur, cur_sim = int(ids[0]), float(sims[0])
        return cur, cur_sim

    def _link_back(self, layer: int, node: int, new: int) -> None:
        cap = self.caps[layer]
        cnt = self.cnt[layer]
        nbr = self.nbr[layer]
        if cnt[node] < cap:
            nbr[node, cnt[node]] = new
            cnt[node] += 1
            return
        cand = np.empty(cap + 1, dtype=np.int32)
        cand[:cap] = nbr[node, :cap]
        cand[cap] = new
        sims = (self.vectors[cand] @ self.vectors[node]).astype(np.float64)
        keep = self.kernel.select_neighbors(self.vectors, cand, sims, cap)
        nbr[node, : len(keep)] = keep
        cnt[node] = len(keep)

    def _build(self) -> None:
        for i in range(self.n):
            level = int(self.levels[i])
            if self.entry < 0:
                self.entry, self.top = i, level
                continue
            q = self.vectors[i]
            if self.top > level:
                cur, cur_sim = self._descend(q, level)
            else:
                cur, cur_sim = self.entry, float(self.vectors[self.entry] @ q)
            for layer in range(min(self.top, level), -1, -1):
                ids, sims = self._search(layer, cur, cur_sim, q, self.ef_construction)
                sel = self.kernel.select_neighbors(
                    self.vectors, ids, sims.astype(np.float64), self.m
                )
                self.nbr[layer][i, : len(sel)] = sel
                self.cnt[layer][i] = len(sel)
                for s in sel.tolist():
                    self._link_back(layer, int(s), i)
                cur, cur_sim = int(ids[0]), float(sims[0])
            if level > self.top:
                self.entry, self.top = i, level

    def query(self, query: np.ndarray, ef: int) -> tuple[np.ndarray, np.ndarray]:
        """Best-first candidates for one query vector, best first."""
        if self.n == 0:
            return np.empty(0, dtype=np.int32), np.empty(0, dtype=np.float32)
        q = np.ascontiguousarray(query, dtype=np.float32)
        if self.n == 1:
            sim = float(self.vectors[0] @ q)
            return np.array([0], dtype=np.int32), np.array([sim], dtype=np.float32)
        cur, cur_sim = self._descend(q, 0)
        ids, sims = self._search(0, cur, cur_sim, q, ef)
        return ids, sims

# cython: boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled kernels for the layered proximity graph.

Signature-compatible with `_hnsw_pure`; the search frontier, result heap,
and dot products all run as C loops over preallocated scratch arrays.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

NATIVE = True


def make_workspace(int n, int ef_max):
    cand_sim = np.empty(n + 1, dtype=np.float64)
    cand_id = np.empty(n + 1, dtype=np.int32)
    res_sim = np.empty(ef_max + 1, dtype=np.float64)
    res_id = np.empty(ef_max + 1, dtype=np.int32)
    return (cand_sim, cand_id, res_sim, res_id)


cdef inline double _dot(const float[:, ::1] vectors, int row, const float[::1] query) nogil:
    cdef double acc = 0.0
    cdef Py_ssize_t j, d = query.shape[0]
    for j in range(d):
        acc += vectors[row, j] * query[j]
    return acc


# min-heaps keyed by (sim, id): the root is the entry with the smallest
# similarity (ties resolved toward the larger id, so smaller ids win races).

cdef inline bint _less(double sa, int ia, double sb, int ib) nogil:
    if sa != sb:
        return sa < sb
    return ia > ib


cdef inline void _heap_push(double[::1] hs, int[::1] hi, int* size, double s, int i) nogil:
    cdef int pos = size[0]
    cdef int parent
    hs[pos] = s
    hi[pos] = i
    size[0] += 1
    while pos > 0:
        parent = (pos - 1) >> 1
        if _less(hs[pos], hi[pos], hs[parent], hi[parent]):
            hs[pos], hs[parent] = hs[parent], hs[pos]
            hi[pos], hi[parent] = hi[parent], hi[pos]
            pos = parent
        else:
            break


cdef inline void _heap_pop(double[::1] hs, int[::1] hi, int* size) nogil:
    cdef int pos = 0
    cdef int child
    size[0] -= 1
    hs[0] = hs[size[0]]
    hi[0] = hi[size[0]]
    while True:
        child = 2 * pos + 1
        if child >= size[0]:
            break
        if child + 1 < size[0] and _less(hs[child + 1], hi[child + 1], hs[child], hi[child]):
            child += 1
        if _less(hs[child], hi[child], hs[pos], hi[pos]):
            hs[pos], hs[child] = hs[child], hs[pos]
            hi[pos], hi[child] = hi[child], hi[pos]
            pos = child
        else:
            break


def search_layer(
    const float[:, ::1] vectors,
    const int[:, ::1] nbr,
    const int[::1] cnt,
    int entry_id,
    double entry_sim,
    const float[::1] query,
    int ef,
    int[::1] visited,
    int epoch,
    ws,
):
    cdef double[::1] cand_sim
    cdef int[::1] cand_id
    cdef double[::1] res_sim
    cdef int[::1] res_id
    if ws is None:
        ws = make_workspace(vectors.shape[0], ef)
    cand_sim, cand_id, res_sim, res_id = ws[0], ws[1], ws[2], ws[3]

    cdef int cand_n = 0, res_n = 0
    cdef int cid, j, k, nid
    cdef double csim, s
    visited[entry_id] = epoch
    # frontier is a min-heap over negated sims: root = best candidate
    _heap_push(cand_sim, cand_id, &cand_n, -entry_sim, entry_id)
    _heap_push(res_sim, res_id, &res_n, entry_sim, entry_id)
    while cand_n > 0:
        csim = -cand_sim[0]
        cid = cand_id[0]
        _heap_pop(cand_sim, cand_id, &cand_n)
        if res_n >= ef and csim < res_sim[0]:
            break
        k = cnt[cid]
        for j in range(k):
            nid = nbr[cid, j]
            if visited[nid] == epoch:
                continue
            visited[nid] = epoch
            s = _dot(vectors, nid, query)
            if res_n < ef:
                _heap_push(res_sim, res_id, &res_n, s, nid)
                _heap_push(cand_sim, cand_id, &cand_n, -s, nid)
            elif s > res_sim[0]:
                _heap_pop(res_sim, res_id, &res_n)
                _heap_push(res_sim, res_id, &res_n, s, nid)
                _heap_push(cand_sim, cand_id, &cand_n, -s, nid)

    out_ids = np.empty(res_n, dtype=np.int32)
    out_sims = np.empty(res_n, dtype=np.float32)
    cdef int[::1] oi = out_ids
    cdef float[::1] os = out_sims
    cdef int pos = res_n - 1
    while res_n > 0:
        oi[pos] = res_id[0]
        os[pos] = <float> res_sim[0]
        _heap_pop(res_sim, res_id, &res_n)
        pos -= 1
    return out_ids, out_sims


def select_neighbors(const float[:, ::1] vectors, ids, sims, int m):
    cdef cnp.ndarray[cnp.int32_t, ndim=1] ids_arr = np.ascontiguousarray(ids, dtype=np.int32)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sims_arr = np.ascontiguousarray(sims, dtype=np.float64)
    cdef Py_ssize_t k = ids_arr.shape[0]
    if k == 0:
        return np.empty(0, dtype=np.int32)
    if k == 1:
        return ids_arr.copy()
    order = np.lexsort((ids_arr, -sims_arr)).astype(np.int32)
    cdef int[::1] order_v = order
    cdef int[::1] idv = ids_arr
    cdef double[::1] sv = sims_arr
    kept = np.empty(min(k, m), dtype=np.int32)
    cdef int[::1] kept_v = kept
    cdef int kept_n = 0
    cdef Py_ssize_t oi, t, d = vectors.shape[1]
    cdef int cand, other
    cdef double best, acc
    cdef Py_ssize_t jj, j_
    for t in range(k):
        oi = order_v[t]
        cand = idv[oi]
        best = -2.0
        for jj in range(kept_n):
            other = kept_v[jj]
            acc = 0.0
            for j_ in range(d):
                acc += vectors[cand, j_] * vectors[other, j_]
            if acc > best:
                best = acc
        if kept_n == 0 or sv[oi] > best:
            kept_v[kept_n] = cand
            kept_n += 1
            if kept_n == m:
                break
    return kept[:kept_n].copy()

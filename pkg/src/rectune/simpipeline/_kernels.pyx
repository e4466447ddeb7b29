# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled pipeline kernels. Semantics mirror ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef inline bint _better(double sa, long ia, double sb, long ib) nogil:
    return sa > sb or (sa == sb and ia < ib)


cdef Py_ssize_t _fuse_topk(const double[:, :] scores, const double[:] weights,
                           const long[:] cand, Py_ssize_t ncand, Py_ssize_t k,
                           long* out_ids, double* out_scores, double* buf) nogil:
    cdef Py_ssize_t i, h, j, n = 0
    cdef Py_ssize_t H = weights.shape[0]
    cdef double acc
    cdef long item
    for i in range(ncand):
        item = cand[i]
        acc = 0.0
        for h in range(H):
            acc = acc + weights[h] * scores[item, h]
        buf[i] = acc
    if k > ncand:
        k = ncand
    if k <= 0:
        return 0
    for i in range(ncand):
        item = cand[i]
        acc = buf[i]
        if n == k:
            if not _better(acc, item, out_scores[n - 1], out_ids[n - 1]):
                continue
            n -= 1
        j = n
        while j > 0 and _better(acc, item, out_scores[j - 1], out_ids[j - 1]):
            out_scores[j] = out_scores[j - 1]
            out_ids[j] = out_ids[j - 1]
            j -= 1
        out_scores[j] = acc
        out_ids[j] = item
        n += 1
    return n


def fuse_topk(const double[:, :] scores, const double[:] weights, cand, Py_ssize_t k):
    """Weighted head fusion over ``cand`` rows, then top-k by (score desc, id asc)."""
    cdef const long[:] c = np.ascontiguousarray(cand, dtype=np.int64)
    cdef Py_ssize_t ncand = c.shape[0]
    if k < 0:
        k = 0
    cdef Py_ssize_t kk = min(k, ncand)
    ids = np.empty(kk, dtype=np.int64)
    out = np.empty(kk, dtype=np.float64)
    cdef long[:] ids_v = ids
    cdef double[:] out_v = out
    cdef double* buf = <double*>malloc((ncand + 1) * sizeof(double))
    cdef long* tid = <long*>malloc((kk + 1) * sizeof(long))
    cdef double* tsc = <double*>malloc((kk + 1) * sizeof(double))
    cdef Py_ssize_t n, i
    try:
        n = _fuse_topk(scores, weights, c, ncand, kk, tid, tsc, buf)
        for i in range(n):
            ids_v[i] = tid[i]
            out_v[i] = tsc[i]
    finally:
        free(buf); free(tid); free(tsc)
    return ids, out


cdef Py_ssize_t _greedy(const long* ids, const double* fused, Py_ssize_t n,
                        const long[:] topics, double penalty, long cap, Py_ssize_t N,
                        long* out_ids, double* out_scores, long* counts, char* used) nogil:
    cdef Py_ssize_t step, i, best, m = 0
    cdef double adj, best_adj
    cdef long t
    for i in range(n):
        used[i] = 0
        counts[topics[ids[i]]] = 0
    for step in range(N):
        best = -1
        best_adj = 0.0
        for i in range(n):
            if used[i]:
                continue
            t = topics[ids[i]]
            if counts[t] >= cap:
                continue
            adj = fused[i] - penalty * counts[t]
            if best < 0 or _better(adj, ids[i], best_adj, ids[best]):
                best = i
                best_adj = adj
        if best < 0:
            break
        used[best] = 1
        counts[topics[ids[best]]] += 1
        out_ids[m] = ids[best]
        out_scores[m] = best_adj
        m += 1
    return m


def greedy_rerank(ids, fused, topics, double penalty, long cap, Py_ssize_t N):
    """Topic-penalized greedy selection; output in selection order."""
    cdef const long[:] ids_v = np.ascontiguousarray(ids, dtype=np.int64)
    cdef const double[:] f_v = np.ascontiguousarray(fused, dtype=np.float64)
    cdef const long[:] t_v = np.ascontiguousarray(topics, dtype=np.int64)
    cdef Py_ssize_t n = ids_v.shape[0]
    cdef Py_ssize_t nt = (np.max(topics) + 1) if len(topics) else 1
    if N < 0:
        N = 0
    out_ids = np.empty(min(N, n), dtype=np.int64)
    out_sc = np.empty(min(N, n), dtype=np.float64)
    cdef long[:] oi = out_ids
    cdef double[:] os = out_sc
    cdef long* counts = <long*>malloc((nt + 1) * sizeof(long))
    cdef char* used = <char*>malloc(n + 1)
    cdef long* tid = <long*>malloc((n + 1) * sizeof(long))
    cdef double* tf = <double*>malloc((n + 1) * sizeof(double))
    cdef long* rid = <long*>malloc((n + 1) * sizeof(long))
    cdef double* rsc = <double*>malloc((n + 1) * sizeof(double))
    cdef Py_ssize_t i, m
    try:
        for i in range(n):
            tid[i] = ids_v[i]
            tf[i] = f_v[i]
        m = _greedy(tid, tf, n, t_v, penalty, cap, min(N, n), rid, rsc, counts, used)
        for i in range(m):
            oi[i] = rid[i]
            os[i] = rsc[i]
    finally:
        free(counts); free(used); free(tid); free(tf); free(rid); free(rsc)
    return out_ids[:m], out_sc[:m]


def evaluate_batch(const double[:, :, :] pre, const double[:, :, :] rank, const long[:, :] topics,
                   const double[:, :] click_appeal, const double[:, :] heart_appeal,
                   const double[:, :] u_click, const double[:, :] u_heart,
                   const double[:] w_pre, const double[:] w_rank,
                   Py_ssize_t K1, Py_ssize_t K2, double penalty, long cap, Py_ssize_t N,
                   const double[:] pos_bias, Py_ssize_t num_topics):
    """Run the whole pipeline plus feedback for a stack of requests.

    Returns an (R, 4) array of per-request clicks, hearts, distinct topics and
    final list length.
    """
    cdef Py_ssize_t R = pre.shape[0]
    cdef Py_ssize_t P = pre.shape[1]
    out = np.zeros((R, 4), dtype=np.float64)
    cdef double[:, :] o = out
    all_ids = np.arange(P, dtype=np.int64)
    cdef long[:] cand0 = all_ids
    cdef long[:] c1v
    cdef Py_ssize_t r, i, n1, n2, m, pos
    cdef double clicks, hearts, distinct
    cdef long t
    if K1 > P:
        K1 = P
    if K2 > K1:
        K2 = K1
    if N > K2:
        N = K2
    if K1 < 0 or K2 < 0 or N < 0:
        K1 = K2 = N = 0
    cdef long* ids1 = <long*>malloc((P + 1) * sizeof(long))
    cdef double* sc1 = <double*>malloc((P + 1) * sizeof(double))
    cdef long* ids2 = <long*>malloc((P + 1) * sizeof(long))
    cdef double* sc2 = <double*>malloc((P + 1) * sizeof(double))
    cdef long* ids3 = <long*>malloc((P + 1) * sizeof(long))
    cdef double* sc3 = <double*>malloc((P + 1) * sizeof(double))
    cdef double* buf = <double*>malloc((P + 1) * sizeof(double))
    cdef long* counts = <long*>malloc((num_topics + 1) * sizeof(long))
    cdef char* used = <char*>malloc(P + 1)
    c1 = np.empty(P, dtype=np.int64)
    c1v = c1
    try:
        for r in range(R):
            n1 = _fuse_topk(pre[r], w_pre, cand0, P, K1, ids1, sc1, buf)
            for i in range(n1):
                c1v[i] = ids1[i]
            n2 = _fuse_topk(rank[r], w_rank, c1v, n1, K2, ids2, sc2, buf)
            m = _greedy(ids2, sc2, n2, topics[r], penalty, cap, N, ids3, sc3, counts, used)
            clicks = 0.0
            hearts = 0.0
            for t in range(num_topics):
                counts[t] = 0
            distinct = 0.0
            for pos in range(m):
                i = ids3[pos]
                if counts[topics[r, i]] == 0:
                    distinct += 1.0
                counts[topics[r, i]] = 1
                if u_click[r, i] < pos_bias[pos] * click_appeal[r, i]:
                    clicks += 1.0
                    if u_heart[r, i] < heart_appeal[r, i]:
                        hearts += 1.0
            o[r, 0] = clicks
            o[r, 1] = hearts
            o[r, 2] = distinct
            o[r, 3] = m
    finally:
        free(ids1); free(sc1); free(ids2); free(sc2); free(ids3); free(sc3)
        free(buf); free(counts); free(used)
    return out

# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# distutils: language = c++
"""Compiled filter-tree decoder.

Mirrors ``supermajority._fallback.decode_csr`` element for element: nodes
are expanded level by level, children of a node are emitted in increasing
order of their admission value ``(eta + a x) mod q``.
"""

from libc.stdint cimport int64_t, uint64_t
from libcpp.vector cimport vector
from libcpp.pair cimport pair
from libcpp.algorithm cimport sort, lower_bound

import numpy as np

cdef uint64_t FP_HI = 0x243F6A8885A308D3
cdef uint64_t FP_LO = 0x13198A2E03707344
cdef uint64_t GOLD = 0x9E3779B97F4A7C15
cdef uint64_t M1 = 0xBF58476D1CE4E5B9
cdef uint64_t M2 = 0x94D049BB133111EB
cdef uint64_t LO_MUL = 0xD6E8FEB86659FD93
cdef uint64_t LO_ADD = 0x632BE59BD9B4E019

BACKEND = "compiled"


cdef inline uint64_t mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * M1
    z = (z ^ (z >> 27)) * M2
    return z ^ (z >> 31)


cdef inline int64_t pmod(int64_t v, int64_t q) noexcept nogil:
    cdef int64_t r = v % q
    if r < 0:
        r += q
    return r


cdef inline void emit(
    int64_t r, int64_t x, int64_t eta, int64_t B, int64_t sc, int64_t q, int lvl,
    vector[int64_t]& path, Py_ssize_t node,
    vector[int64_t]& nres, vector[int64_t]& nscore, vector[int64_t]& npath,
) noexcept nogil:
    cdef int c
    cdef int64_t v = pmod(eta + r, q)
    nres.push_back(pmod(v - B, q))
    nscore.push_back(sc)
    for c in range(lvl):
        npath.push_back(path[node * lvl + c])
    npath.push_back(x)


cdef void decode_one(
    const int64_t* X, Py_ssize_t m, int64_t q, int K,
    const int64_t* a, const int64_t* ainv, const int64_t* b,
    const int64_t* delta, const int64_t* reach, bint complement,
    vector[char]& bitmap,
    vector[int64_t]& out_paths, vector[int64_t]& out_scores,
) noexcept nogil:
    cdef vector[int64_t] res, score, path, nres, nscore, npath
    cdef vector[pair[int64_t, int64_t]] table
    cdef pair[int64_t, int64_t] key
    cdef Py_ssize_t i, j, node, nnodes, start
    cdef int lvl, c
    cdef int64_t A, Ai, B, D, R, eta, s, v, x, lo, hi, mem
    cdef bint built

    for i in range(m):
        bitmap[X[i]] = 1
    res.push_back(0)
    score.push_back(0)
    for lvl in range(K):
        A = a[lvl]
        Ai = ainv[lvl]
        B = b[lvl]
        D = delta[lvl]
        if D > q:
            D = q
        R = reach[lvl]
        built = False
        nres.clear()
        nscore.clear()
        npath.clear()
        nnodes = res.size()
        for node in range(nnodes):
            s = score[node]
            eta = pmod(res[node] + B, q)
            if s >= R:
                for v in range(D):
                    x = (Ai * pmod(v - eta, q)) % q
                    mem = bitmap[x]
                    if complement:
                        mem = 1 - mem
                    nres.push_back(pmod(v - B, q))
                    nscore.push_back(s + mem)
                    for c in range(lvl):
                        npath.push_back(path[node * lvl + c])
                    npath.push_back(x)
            elif s + 1 >= R:
                if complement:
                    for v in range(D):
                        x = (Ai * pmod(v - eta, q)) % q
                        if bitmap[x]:
                            continue
                        nres.push_back(pmod(v - B, q))
                        nscore.push_back(s + 1)
                        for c in range(lvl):
                            npath.push_back(path[node * lvl + c])
                        npath.push_back(x)
                else:
                    if not built:
                        table.clear()
                        for i in range(m):
                            key.first = (A * X[i]) % q
                            key.second = X[i]
                            table.push_back(key)
                        sort(table.begin(), table.end())
                        built = True
                    if m == 0:
                        continue
                    lo = pmod(-eta, q)
                    hi = lo + D
                    key.first = lo
                    key.second = -1
                    start = lower_bound(table.begin(), table.end(), key) - table.begin()
                    if hi <= q:
                        j = start
                        while j < m and table[j].first < hi:
                            emit(table[j].first, table[j].second, eta, B, s + 1, q, lvl,
                                 path, node, nres, nscore, npath)
                            j += 1
                    else:
                        j = start
                        while j < m:
                            emit(table[j].first, table[j].second, eta, B, s + 1, q, lvl,
                                 path, node, nres, nscore, npath)
                            j += 1
                        j = 0
                        while j < start and table[j].first < hi - q:
                            emit(table[j].first, table[j].second, eta, B, s + 1, q, lvl,
                                 path, node, nres, nscore, npath)
                            j += 1
        res.swap(nres)
        score.swap(nscore)
        path.swap(npath)
        if res.size() == 0:
            break
    if res.size() > 0:
        for i in range(res.size()):
            out_scores.push_back(score[i])
            for c in range(K):
                out_paths.push_back(path[i * K + c])
    for i in range(m):
        bitmap[X[i]] = 0


def decode_csr(indptr, indices, long long q, a, ainv, b, fam, delta, reach, bint complement):
    """Decode every set of a CSR batch; see the pure-Python twin for details."""
    cdef const int64_t[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const int64_t[::1] ix = np.ascontiguousarray(indices, dtype=np.int64)
    cdef const int64_t[:, ::1] A = np.ascontiguousarray(a, dtype=np.int64)
    cdef const int64_t[:, ::1] AI = np.ascontiguousarray(ainv, dtype=np.int64)
    cdef const int64_t[:, ::1] Bv = np.ascontiguousarray(b, dtype=np.int64)
    cdef const int64_t[::1] F = np.ascontiguousarray(fam, dtype=np.int64)
    cdef const int64_t[::1] Dl = np.ascontiguousarray(delta, dtype=np.int64)
    cdef const int64_t[::1] Rc = np.ascontiguousarray(reach, dtype=np.int64)
    cdef Py_ssize_t n = ip.shape[0] - 1
    cdef int K = Dl.shape[0]
    if q <= 0 or q >= (1 << 31):
        raise ValueError("compiled decoder needs 0 < q < 2**31")
    if A.shape[1] != K or Rc.shape[0] != K or F.shape[0] != n:
        raise ValueError("inconsistent kernel inputs")
    counts = np.zeros(n, dtype=np.int64)
    cdef int64_t[::1] cnt = counts
    cdef vector[int64_t] paths, scores
    cdef vector[char] bitmap
    cdef Py_ssize_t i, before, f
    cdef const int64_t* base = NULL
    if ix.shape[0] > 0:
        base = &ix[0]
    bitmap.resize(q, 0)
    with nogil:
        for i in range(n):
            f = F[i]
            before = scores.size()
            decode_one(base + ip[i], ip[i + 1] - ip[i], q, K,
                       &A[f, 0], &AI[f, 0], &Bv[f, 0], &Dl[0], &Rc[0], complement,
                       bitmap, paths, scores)
            cnt[i] = scores.size() - before
    total = scores.size()
    out_paths = np.empty((total, K), dtype=np.int64)
    out_scores = np.empty(total, dtype=np.int64)
    hi = np.empty(total, dtype=np.uint64)
    lo = np.empty(total, dtype=np.uint64)
    cdef int64_t[:, ::1] P = out_paths
    cdef int64_t[::1] S = out_scores
    cdef uint64_t[::1] H = hi
    cdef uint64_t[::1] L = lo
    cdef uint64_t h, l, e
    cdef int c
    with nogil:
        for i in range(total):
            S[i] = scores[i]
            h = FP_HI
            l = FP_LO
            for c in range(K):
                P[i, c] = paths[i * K + c]
                e = <uint64_t>paths[i * K + c]
                h = mix64(h + e + GOLD)
                l = mix64(l ^ (e * LO_MUL + LO_ADD))
            H[i] = h
            L[i] = l
    return counts, out_paths, out_scores, hi, lo

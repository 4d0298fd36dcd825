"""Pure numpy decoder, bit-for-bit twin of the compiled kernel.

Children of every node are ordered by their admission value
``v = (eta + a x) mod q``; nodes keep the order of their parents.
"""

from __future__ import annotations

import numpy as np

from .hashing import path_fingerprints_np

BACKEND = "python"


def _decode_one(X, q, a, ainv, b, delta, reach, complement):
    K = len(delta)
    X = np.asarray(X, dtype=np.int64)
    member = np.zeros(q, dtype=bool)
    member[X] = True
    res = np.zeros(1, dtype=np.int64)
    score = np.zeros(1, dtype=np.int64)
    paths = np.zeros((1, 0), dtype=np.int64)
    for lvl in range(K):
        A, Ai, B = int(a[lvl]), int(ainv[lvl]), int(b[lvl])
        D = min(int(delta[lvl]), q)
        R = int(reach[lvl])
        eta = (res + B) % q
        full = score >= R
        part = (~full) & (score + 1 >= R)
        parents, vs, xs, sc = [], [], [], []
        idx = np.flatnonzero(full)
        if idx.size:
            v = np.arange(D, dtype=np.int64)
            x = (Ai * ((v[None, :] - eta[idx, None]) % q)) % q
            mem = member[x]
            if complement:
                mem = ~mem
            parents.append(np.repeat(idx, D))
            vs.append(np.tile(v, idx.size))
            xs.append(x.ravel())
            sc.append((score[idx, None] + mem).ravel())
        idx = np.flatnonzero(part)
        if idx.size:
            if complement:
                v = np.arange(D, dtype=np.int64)
                x = (Ai * ((v[None, :] - eta[idx, None]) % q)) % q
                keep = ~member[x]
                vv = np.broadcast_to(v, x.shape)
            else:
                x = np.broadcast_to(X, (idx.size, X.size))
                vv = (eta[idx, None] + (A * X[None, :]) % q) % q
                keep = vv < D
            rows = np.broadcast_to(idx[:, None], x.shape)
            parents.append(rows[keep])
            vs.append(vv[keep])
            xs.append(x[keep])
            sc.append(score[rows[keep]] + 1)
        if not parents:
            return np.zeros((0, K), dtype=np.int64), np.zeros(0, dtype=np.int64)
        par = np.concatenate(parents)
        v = np.concatenate(vs)
        x = np.concatenate(xs)
        s = np.concatenate(sc)
        order = np.lexsort((v, par))
        par, v, x, s = par[order], v[order], x[order], s[order]
        res = (v - B) % q
        score = s
        paths = np.concatenate([paths[par], x[:, None]], axis=1)
        if res.size == 0:
            return np.zeros((0, K), dtype=np.int64), np.zeros(0, dtype=np.int64)
    return paths, score


def decode_csr(indptr, indices, q, a, ainv, b, fam, delta, reach, complement):
    """Decode every set of a CSR batch.

    Parameters
    ----------
    indptr, indices : array_like
        CSR layout of the sets, elements sorted within each set.
    q : int
        Prime modulus and universe size.
    a, ainv, b : ndarray, shape (F, K)
        Per-family coefficients, inverses and offsets.
    fam : ndarray, shape (n,)
        Family row used by each set.
    delta : ndarray, shape (K,)
        Branching factors.
    reach : ndarray, shape (K,)
        Least admissible score at each level.
    complement : bool
        Count non-members instead of members.

    Returns
    -------
    counts, paths, scores, fp_hi, fp_lo
    """
    indptr = np.asarray(indptr, dtype=np.int64)
    indices = np.asarray(indices, dtype=np.int64)
    a = np.asarray(a, dtype=np.int64)
    ainv = np.asarray(ainv, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    fam = np.asarray(fam, dtype=np.int64)
    K = len(delta)
    n = len(indptr) - 1
    counts = np.zeros(n, dtype=np.int64)
    all_paths, all_scores = [], []
    for i in range(n):
        f = fam[i]
        p, s = _decode_one(indices[indptr[i]:indptr[i + 1]], int(q), a[f], ainv[f], b[f],
                           delta, reach, bool(complement))
        counts[i] = len(s)
        all_paths.append(p)
        all_scores.append(s)
    if all_paths:
        paths = np.concatenate(all_paths).reshape(-1, K)
        scores = np.concatenate(all_scores)
    else:
        paths = np.zeros((0, K), dtype=np.int64)
        scores = np.zeros(0, dtype=np.int64)
    hi, lo = path_fingerprints_np(paths)
    return counts, paths, scores, hi, lo

"""Affine 2-independent hashing over a prime field and output-sensitive sampling.

A level-``i`` hash of a path prefix ``r = (r_1, ..., r_i)`` is

    h_i(r) = a_1 r_1 + ... + a_i r_i + b_i  (mod q)

Keeping the running residue ``a_1 r_1 + ... + a_{i-1} r_{i-1}`` at each tree
node turns the admission test for a child ``x`` into ``(eta + a_i x) mod q <
delta`` with ``eta`` fixed per node, which both samplers below exploit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MASK64",
    "is_prime",
    "next_prime",
    "modinv",
    "HashFamily",
    "hash_prefix",
    "SortedMemberTable",
    "sample_members",
    "sample_universe",
    "mix64",
    "mix64_np",
    "path_fingerprint",
    "path_fingerprints_np",
    "FP_SEED_HI",
    "FP_SEED_LO",
]

MASK64 = (1 << 64) - 1
_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)
_LARGEST_PRIME_64 = (1 << 64) - 59


def is_prime(m):
    """Deterministic Miller-Rabin, exact for all ``m < 3.3e24``."""
    m = int(m)
    if m < 2:
        return False
    for p in _MR_BASES:
        if m % p == 0:
            return m == p
    d, s = m - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in _MR_BASES:
        x = pow(a, d, m)
        if x in (1, m - 1):
            continue
        for _ in range(s - 1):
            x = x * x % m
            if x == m - 1:
                break
        else:
            return False
    return True


def next_prime(m):
    """Smallest prime ``>= m``.

    Raises
    ------
    OverflowError
        If no 64-bit prime is at least ``m``.
    """
    m = int(m)
    if m < 2:
        raise ValueError("m must be at least 2")
    if m > _LARGEST_PRIME_64:
        raise OverflowError("no 64-bit prime at or above m")
    if m == 2:
        return 2
    c = m | 1
    while not is_prime(c):
        c += 2
    return c


def modinv(a, q):
    """Inverse of ``a`` modulo the prime ``q``."""
    a = int(a) % q
    if a == 0:
        raise ZeroDivisionError("zero has no inverse")
    return pow(a, -1, q)


@dataclass(frozen=True)
class HashFamily:
    """Per-level coefficients of one filter tree.

    ``a[i]`` multiplies the level ``i + 1`` element of a path, and ``b[i]``
    is the level ``i + 1`` offset. The full coefficient matrix of the
    textbook form is ``a_{i,j} = a[j - 1]`` for ``j <= i``.

    Attributes
    ----------
    q : int
        Prime modulus.
    a, b : tuple of int
        Coefficients, ``a`` in ``[1, q-1]`` and ``b`` in ``[0, q-1]``.
    seed : int
        Master seed the coefficients were derived from.
    """

    q: int
    a: tuple
    b: tuple
    seed: int = 0
    spawn_key: tuple = ()
    ainv: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.a) != len(self.b):
            raise ValueError("a and b need one entry per level")
        if any(int(x) % self.q == 0 for x in self.a):
            raise ValueError("coefficients must be non-zero mod q")
        object.__setattr__(self, "ainv", tuple(modinv(x, self.q) for x in self.a))

    @property
    def depth(self):
        return len(self.a)

    @classmethod
    def from_seed(cls, seed, q, depth, spawn_key=()):
        """Draw a family reproducibly from ``seed`` and a spawn key."""
        ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in spawn_key))
        rng = np.random.default_rng(ss)
        a = tuple(int(v) for v in rng.integers(1, q, size=depth, dtype=np.int64))
        b = tuple(int(v) for v in rng.integers(0, q, size=depth, dtype=np.int64))
        return cls(q=int(q), a=a, b=b, seed=int(seed), spawn_key=tuple(spawn_key))

    def coefficient_matrix(self):
        """Lower-triangular ``a_{i,j}`` with rows for levels ``1..depth``."""
        k = self.depth
        m = np.zeros((k, k), dtype=object)
        for i in range(k):
            for j in range(i + 1):
                m[i, j] = self.a[j]
        return m


def hash_prefix(family, i, prefix):
    """Level-``i`` hash of a prefix of length ``i`` (levels start at 1)."""
    if i < 1 or i > family.depth:
        raise ValueError(f"level must lie in [1, {family.depth}], got {i}")
    if len(prefix) != i:
        raise ValueError("prefix length must equal the level")
    q = family.q
    acc = family.b[i - 1]
    for j, r in enumerate(prefix):
        acc += family.a[j] * int(r)
    return acc % q


@dataclass(frozen=True)
class SortedMemberTable:
    """Members of a set ordered by their residue ``a x mod q``."""

    a: int
    q: int
    residues: np.ndarray
    elements: np.ndarray

    @classmethod
    def build(cls, elements, a, q):
        x = np.asarray(elements, dtype=np.int64)
        if q < (1 << 31):
            r = (x * (int(a) % q)) % q
        else:
            r = np.array([int(v) * int(a) % q for v in x], dtype=np.int64)
        order = np.argsort(r, kind="stable")
        return cls(int(a), int(q), r[order], x[order])

    def __len__(self):
        return len(self.residues)


def sample_members(eta, a, delta, table):
    """Members ``x`` with ``(eta + a x) mod q < delta``, ordered by that value.

    One binary search locates the first residue at or after ``-eta mod q``;
    the hits are the next ``delta`` residues cyclically.
    """
    if int(a) % table.q != table.a % table.q:
        raise ValueError("table was built for a different coefficient")
    q = table.q
    if delta <= 0 or len(table) == 0:
        return table.elements[:0].copy()
    if delta >= q:
        lo = (-int(eta)) % q
        start = int(np.searchsorted(table.residues, lo, side="left"))
        return np.concatenate([table.elements[start:], table.elements[:start]])
    lo = (-int(eta)) % q
    hi = lo + int(delta)
    res = table.residues
    start = int(np.searchsorted(res, lo, side="left"))
    if hi <= q:
        stop = int(np.searchsorted(res, hi, side="left"))
        return table.elements[start:stop].copy()
    stop = int(np.searchsorted(res, hi - q, side="left"))
    return np.concatenate([table.elements[start:], table.elements[:stop]])


def sample_universe(eta, a, delta, q):
    """All ``x`` in ``[0, q)`` with ``(eta + a x) mod q < delta``.

    The solutions are ``a^{-1}(v - eta) mod q`` for ``v < delta`` and are
    returned in order of ``v``.
    """
    delta = min(int(delta), int(q))
    if delta <= 0:
        return np.zeros(0, dtype=np.int64)
    inv = modinv(a, q)
    v = np.arange(delta, dtype=np.int64)
    if q < (1 << 31):
        return (inv * ((v - int(eta)) % q)) % q
    return np.array([inv * ((int(t) - int(eta)) % q) % q for t in v], dtype=np.int64)


# ---------------------------------------------------------------------------
# 64-bit mixing for path fingerprints

FP_SEED_HI = 0x243F6A8885A308D3
FP_SEED_LO = 0x13198A2E03707344
_GOLD = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_LO_MUL = 0xD6E8FEB86659FD93
_LO_ADD = 0x632BE59BD9B4E019


def mix64(z):
    """The splitmix64 finalizer on Python integers."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def mix64_np(z):
    """Vectorized :func:`mix64` on ``uint64`` arrays (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


def path_fingerprint(path):
    """128-bit fingerprint ``(hi, lo)`` of an element sequence."""
    h, l = FP_SEED_HI, FP_SEED_LO
    for e in path:
        e = int(e)
        h = mix64(h + e + _GOLD)
        l = mix64(l ^ ((e * _LO_MUL + _LO_ADD) & MASK64))
    return h, l


def path_fingerprints_np(paths):
    """Row-wise :func:`path_fingerprint` of an ``(m, K)`` integer array."""
    paths = np.asarray(paths, dtype=np.int64)
    m = paths.shape[0]
    h = np.full(m, FP_SEED_HI, dtype=np.uint64)
    l = np.full(m, FP_SEED_LO, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for j in range(paths.shape[1]):
            e = paths[:, j].astype(np.uint64)
            h = mix64_np(h + e + np.uint64(_GOLD))
            l = mix64_np(l ^ (e * np.uint64(_LO_MUL) + np.uint64(_LO_ADD)))
    return h, l

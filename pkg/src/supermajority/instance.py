"""Planted instances with exact set weights, and their on-disk formats.

Binary layout (all little-endian)::

    magic     4s   b"GSS1"
    version   u16
    d         u32  universe size sets are drawn from
    q         u32  padded prime universe
    n         u64  dataset size
    n_queries u64
    params    4 x f64  (wq, wu, w1, w2)
    n sets, then n_queries sets, each: u32 length, length x u32 elements
    n_planted u64
    n_planted x (u64 query index, u64 dataset index)
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .divergence import GapParams
from .hashing import next_prime

__all__ = [
    "Instance",
    "MalformedFileError",
    "generate",
    "random_subset",
    "planted_pair",
    "weights_for",
    "overlap_bound",
    "to_csr",
    "write_instance",
    "read_instance",
    "write_text",
    "read_text",
    "GSS_MAGIC",
    "GSS_VERSION",
]

GSS_MAGIC = b"GSS1"
GSS_VERSION = 1
_HEADER = struct.Struct("<4sHIIQQdddd")


class MalformedFileError(ValueError):
    """A file that does not follow the expected layout."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class Instance:
    """A dataset of fixed-weight sets with queries and planted close pairs."""

    d: int
    q: int
    params: GapParams
    dataset: list
    queries: list
    planted: list = field(default_factory=list)

    @property
    def n(self):
        return len(self.dataset)

    @property
    def n_queries(self):
        return len(self.queries)

    def dataset_csr(self):
        return to_csr(self.dataset)

    def fingerprint(self):
        """SHA-256 of the binary serialization."""
        return hashlib.sha256(_encode(self)).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return _encode(self) == _encode(other)


def to_csr(sets):
    """``(indptr, indices)`` arrays for a list of sorted integer arrays."""
    lens = np.array([len(s) for s in sets], dtype=np.int64)
    indptr = np.zeros(len(sets) + 1, dtype=np.int64)
    np.cumsum(lens, out=indptr[1:])
    if len(sets):
        indices = np.concatenate([np.asarray(s, dtype=np.int64) for s in sets])
    else:
        indices = np.zeros(0, dtype=np.int64)
    return indptr, indices


def weights_for(params, q):
    """Exact cardinalities ``(|x|, |y|, |x & y'|)`` for a padded universe ``q``."""
    return (int(round(params.wq * q)), int(round(params.wu * q)), int(round(params.w1 * q)))


def overlap_bound(params, q, n):
    """Largest non-planted overlap the generator accepts."""
    m2 = params.w2 * q
    return m2 * (1.0 + 5.0 * math.sqrt(math.log(max(n, 2)) / m2))


def random_subset(rng, d, k, size=None):
    """Uniform ``k``-subsets of ``[0, d)``, each sorted.

    With ``size`` set, returns a ``(size, k)`` array of independent draws.
    """
    if not 0 <= k <= d:
        raise ValueError("subset size must lie in [0, d]")
    if size is None:
        return np.sort(rng.choice(d, size=k, replace=False)).astype(np.int64)
    out = np.empty((size, k), dtype=np.int64)
    step = max(1, (1 << 22) // max(d, 1))
    for s in range(0, size, step):
        e = min(size, s + step)
        keys = rng.random((e - s, d))
        out[s:e] = np.sort(np.argpartition(keys, k - 1, axis=1)[:, :k] if k else
                           np.zeros((e - s, 0), dtype=np.int64), axis=1)
    return out


def planted_pair(rng, d, mq, mu, m1):
    """A query of weight ``mq`` and a point of weight ``mu`` sharing ``m1``."""
    if m1 > min(mq, mu) or mq + mu - m1 > d:
        raise ValueError("weights admit no planted pair in this universe")
    x = random_subset(rng, d, mq)
    inside = rng.choice(x, size=m1, replace=False)
    rest = np.setdiff1d(np.arange(d, dtype=np.int64), x, assume_unique=True)
    outside = rng.choice(rest, size=mu - m1, replace=False)
    y = np.sort(np.concatenate([inside, outside])).astype(np.int64)
    return x, y


def _overlaps(queries, dataset, d):
    Q = np.zeros((len(queries), d), dtype=np.float32)
    for i, s in enumerate(queries):
        Q[i, s] = 1.0
    out = np.empty((len(queries), len(dataset)), dtype=np.int64)
    chunk = 2048
    for s in range(0, len(dataset), chunk):
        part = dataset[s:s + chunk]
        Y = np.zeros((len(part), d), dtype=np.float32)
        for i, y in enumerate(part):
            Y[i, y] = 1.0
        out[:, s:s + len(part)] = np.rint(Q @ Y.T).astype(np.int64)
    return out


def generate(n, d, params, n_queries, seed=0, strict=True, n_distractors=0, max_rounds=50):
    """Sample a planted instance.

    Every query ``j < n_queries`` has a partner in the dataset sharing
    exactly ``round(w1 q)`` elements; optional distractor queries have none.
    All other points are uniform fixed-weight subsets of ``[0, d)``.
    Points whose overlap with some query exceeds :func:`overlap_bound` are
    redrawn.

    Parameters
    ----------
    strict : bool
        Enforce ``w2 d >= 20 ln n``; turning it off allows desk-scale
        instances where far overlaps are small.

    Raises
    ------
    ValueError
        If the precondition fails or the weights do not fit the universe.
    """
    if n < 1 or n_queries < 0 or n_queries > n:
        raise ValueError("need n >= 1 and 0 <= n_queries <= n")
    if strict and params.w2 * d < 20.0 * math.log(max(n, 2)):
        raise ValueError(
            f"w2 * d = {params.w2 * d:.3g} is below 20 ln n = {20 * math.log(max(n, 2)):.3g}"
        )
    q = next_prime(d)
    mq, mu, m1 = weights_for(params, q)
    if mq > d or mu > d:
        raise ValueError("set weights exceed the universe size")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    slots = rng.permutation(n)[:n_queries]
    queries, dataset = [None] * (n_queries + n_distractors), [None] * n
    for j in range(n_queries):
        queries[j], dataset[slots[j]] = planted_pair(rng, d, mq, mu, m1)
    for j in range(n_queries, n_queries + n_distractors):
        queries[j] = random_subset(rng, d, mq)
    free = [i for i in range(n) if dataset[i] is None]
    if free:
        draws = random_subset(rng, d, mu, size=len(free))
        for i, row in zip(free, draws):
            dataset[i] = row
    owner = {int(slots[j]): j for j in range(n_queries)}
    bound = overlap_bound(params, q, n)
    for _ in range(max_rounds):
        if not queries:
            break
        ov = _overlaps(queries, dataset, d)
        for i, j in owner.items():
            ov[j, i] = 0
        bad = np.argwhere(ov > bound)
        if bad.size == 0:
            break
        for qi, di in bad:
            di = int(di)
            if di in owner:
                j = owner[di]
                queries[j], dataset[di] = planted_pair(rng, d, mq, mu, m1)
            else:
                dataset[di] = random_subset(rng, d, mu)
    else:
        raise RuntimeError("could not satisfy the overlap guard")
    planted = [(j, int(slots[j])) for j in range(n_queries)]
    return Instance(d=int(d), q=int(q), params=params, dataset=dataset,
                    queries=queries, planted=planted)


# ---------------------------------------------------------------------------
# binary format


def _encode(inst):
    p = inst.params
    parts = [_HEADER.pack(GSS_MAGIC, GSS_VERSION, inst.d, inst.q, inst.n,
                          inst.n_queries, p.wq, p.wu, p.w1, p.w2)]
    for s in list(inst.dataset) + list(inst.queries):
        s = np.asarray(s, dtype="<u4")
        parts.append(struct.pack("<I", len(s)))
        parts.append(s.tobytes())
    parts.append(struct.pack("<Q", len(inst.planted)))
    if inst.planted:
        parts.append(np.asarray(inst.planted, dtype="<u8").tobytes())
    return b"".join(parts)


def write_instance(inst, path):
    with open(path, "wb") as fh:
        fh.write(_encode(inst))


def _take(buf, off, size, what):
    if off + size > len(buf):
        raise MalformedFileError(f"truncated while reading {what}", off)
    return buf[off:off + size], off + size


def read_instance(path):
    """Read a GSS1 file.

    Raises
    ------
    MalformedFileError
        On a bad magic, truncation or inconsistent content, with the offset.
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    raw, off = _take(buf, 0, _HEADER.size, "header")
    magic, version, d, q, n, nq, wq, wu, w1, w2 = _HEADER.unpack(raw)
    if magic != GSS_MAGIC:
        raise MalformedFileError(f"bad magic {magic!r}", 0)
    if version != GSS_VERSION:
        raise MalformedFileError(f"unsupported version {version}", 4)
    sets = []
    for i in range(n + nq):
        raw, off2 = _take(buf, off, 4, f"length of set {i}")
        (ln,) = struct.unpack("<I", raw)
        raw, off3 = _take(buf, off2, 4 * ln, f"elements of set {i}")
        s = np.frombuffer(raw, dtype="<u4").astype(np.int64)
        if ln and (s[-1] >= d or np.any(np.diff(s) <= 0)):
            raise MalformedFileError(f"set {i} is not strictly sorted inside [0, d)", off2)
        sets.append(s)
        off = off3
    raw, off = _take(buf, off, 8, "planted count")
    (npl,) = struct.unpack("<Q", raw)
    raw, end = _take(buf, off, 16 * npl, "planted pairs")
    pairs = np.frombuffer(raw, dtype="<u8").reshape(-1, 2)
    for j, (a, b) in enumerate(pairs):
        if a >= nq or b >= n:
            raise MalformedFileError(f"planted pair {j} out of range", off + 16 * j)
    if end != len(buf):
        raise MalformedFileError("trailing bytes", end)
    params = GapParams(wq, wu, w1, w2)
    return Instance(d=int(d), q=int(q), params=params, dataset=sets[:n],
                    queries=sets[n:], planted=[(int(a), int(b)) for a, b in pairs])


# ---------------------------------------------------------------------------
# text export


def write_text(sets, path):
    """One set per line, elements separated by single spaces."""
    with open(path, "w") as fh:
        for s in sets:
            fh.write(" ".join(str(int(v)) for v in s))
            fh.write("\n")


def read_text(path):
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            out.append(np.array(sorted(int(v) for v in line.split()) if line else [],
                                dtype=np.int64))
    return out

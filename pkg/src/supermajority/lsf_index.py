"""Supermajority filter trees: planning, decoding, the tensored index and queries.

A half-tree of depth ``K`` keeps a path ``r`` of universe elements when every
prefix passes the hash admission ``h_i(r_1..r_i) < Delta_i`` and the
trimming rule ``|prefix & X| >= t l - c_l``. Two independent half-trees are
combined by taking the cross product of their surviving paths, which
yields an effective depth of ``k = 2K``.

Index file layout (all little-endian)::

    magic       4s  b"SMJ1"
    version     u16
    config      q u64, d u64, n u64, seed u64, k u32, K u32, reps u32,
                pilot successes i64, pilot trials i64,
                params 4 x f64, requested (tq, tu) 2 x f64,
                thresholds (tq, tu) 2 x f64, directions 2 x i8,
                K x u64 branching factors
    dataset     n_points u64, (n_points + 1) x u64 offsets, elements u32
    per rep     count u64, count x u64 key_hi, count x u64 key_lo,
                count x u64 point ids (sorted by key, then id)
"""

from __future__ import annotations

import math
import os
import struct
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from ._backend import get_backend
from .divergence import GapParams, Thresholds, kl_binary
from .exponents import (
    ConfigurationError,
    ExponentPair,
    divergence_terms,
    rho_pair,
    tree_depth,
)
from .hashing import HashFamily, mix64_np, next_prime
from .instance import planted_pair, to_csr, weights_for

__all__ = [
    "SIDES",
    "SideSchedule",
    "TreeConfig",
    "DecodedPath",
    "FilterIndex",
    "QueryReport",
    "CapacityWarning",
    "make_config",
    "snap_thresholds",
    "branching_sequence",
    "slack_sequence",
    "wilson_lower",
    "pilot_collisions",
    "plan",
    "decode",
    "decode_batch",
    "shared_counts",
    "pair_keys",
    "build",
    "query",
    "query_batch",
    "save_index",
    "load_index",
    "SMJ_MAGIC",
    "SMJ_VERSION",
]

SIDES = ("query", "update")
SMJ_MAGIC = b"SMJ1"
SMJ_VERSION = 1
PILOT_TAG = 1 << 32
_PAIR_A = np.uint64(0xA0761D6478BD642F)
_PAIR_B = np.uint64(0xE7037ED1A0B428DB)
_CONFIG = struct.Struct("<QQQQIIIqqddddddddbb")


class CapacityWarning(UserWarning):
    """A single point produced more index keys than the configured ceiling."""


def _threads():
    raw = os.environ.get("SMJ_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return max(1, os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# schedules


def slack_sequence(t, K):
    """``c_l = sqrt(t (1 - t)) sqrt(6.5 l ln(3K))`` for ``l < K`` and ``c_K = 0``."""
    s = math.sqrt(max(t * (1.0 - t), 0.0))
    out = [s * math.sqrt(6.5 * l * math.log(3 * K)) for l in range(1, K)]
    return tuple(out + [0.0])


def branching_sequence(delta, K):
    """Powers of two whose running products are ``2^floor(i log2 delta)``."""
    lg = math.log2(delta)
    L = [0] + [int(math.floor(i * lg + 1e-12)) for i in range(1, K + 1)]
    return tuple(1 << (L[i] - L[i - 1]) for i in range(1, K + 1))


@dataclass(frozen=True)
class SideSchedule:
    """Trimming schedule of one side.

    Attributes
    ----------
    threshold : float
        Snapped threshold ``t``.
    direction : int
        ``+1`` for ``|r & X| >= t |r|``, ``-1`` for ``|r & X| <= t |r|``.
    slack : tuple of float
        ``c_1, ..., c_K``.
    need : tuple of int
        Least admissible score after ``l`` levels, counting members (or
        non-members when ``direction`` is ``-1``).
    reach : tuple of int
        ``need`` tightened by look-ahead: a prefix below ``reach_l`` cannot
        complete a surviving path, so pruning it leaves the output unchanged.
    """

    threshold: float
    direction: int
    slack: tuple
    need: tuple
    reach: tuple

    @property
    def complement(self):
        return self.direction < 0

    @classmethod
    def build(cls, t, direction, K, slack=None):
        c = slack_sequence(t, K) if slack is None else tuple(slack)
        eff = t if direction > 0 else 1.0 - t
        need = tuple(max(0, math.ceil(eff * l - c[l - 1] - 1e-9)) for l in range(1, K + 1))
        reach = tuple(max(need[j] - (j - l) for j in range(l, K)) for l in range(K))
        return cls(float(t), int(direction), c, need, tuple(max(r, 0) for r in reach))


def _direction(t, w):
    return 1 if t > w else -1


@dataclass(frozen=True)
class TreeConfig:
    """Complete plan of a tensored supermajority filter index.

    Attributes
    ----------
    params : GapParams
    q : int
        Prime universe size.
    d : int
        Universe the sets are drawn from, ``d <= q``.
    n : int
        Dataset size the depth was planned for.
    k, K : int
        Full and half depth, ``k = 2K``.
    requested, thresholds : Thresholds
        Thresholds before and after snapping to multiples of ``1/K``.
    delta : float
        ``exp(D(T1||P1))`` at the snapped thresholds.
    delta_seq : tuple of int
        Branching factors of the half-tree levels.
    reps : int
        Independent repetitions.
    seed : int
        Master seed of all hash families.
    directions : tuple of int
        ``(+1 | -1)`` for the query and the update side.
    exponents, requested_exponents : ExponentPair
        Exponents at the snapped and at the requested thresholds.
    pilot : tuple or None
        ``(successes, trials)`` of the repetition pilot.
    """

    params: GapParams
    q: int
    d: int
    n: int
    k: int
    K: int
    requested: Thresholds
    thresholds: Thresholds
    delta: float
    delta_seq: tuple
    reps: int
    seed: int
    directions: tuple
    exponents: Optional[ExponentPair] = None
    requested_exponents: Optional[ExponentPair] = None
    pilot: Optional[tuple] = None

    @property
    def distortion(self):
        """Largest exponent change caused by snapping."""
        if self.exponents is None or self.requested_exponents is None:
            return 0.0
        return max(abs(self.exponents.rho_q - self.requested_exponents.rho_q),
                   abs(self.exponents.rho_u - self.requested_exponents.rho_u))

    @property
    def threshold_shift(self):
        return max(abs(self.thresholds.tq - self.requested.tq),
                   abs(self.thresholds.tu - self.requested.tu))

    @property
    def slack_seq(self):
        """Pairs ``(c_l for the query side, c_l for the update side)``."""
        return tuple(zip(self.schedule("query").slack, self.schedule("update").slack))

    @cached_property
    def _schedules(self):
        return {
            "query": SideSchedule.build(self.thresholds.tq, self.directions[0], self.K),
            "update": SideSchedule.build(self.thresholds.tu, self.directions[1], self.K),
        }

    def schedule(self, side):
        if side not in SIDES:
            raise ValueError("side must be 'query' or 'update'")
        return self._schedules[side]

    def family(self, rep, half):
        """Hash family of repetition ``rep`` and half-tree ``half`` (1 or 2)."""
        if half not in (1, 2):
            raise ValueError("half must be 1 or 2")
        return HashFamily.from_seed(self.seed, self.q, self.K, (int(rep), int(half)))

    def family_arrays(self, half, reps=None):
        """Stacked ``(a, ainv, b)`` of the given repetitions."""
        reps = range(self.reps) if reps is None else reps
        fams = [self.family(r, half) for r in reps]
        return _stack(fams, self.K)

    def summary(self):
        e = self.exponents
        return {
            "n": self.n, "d": self.d, "q": self.q, "k": self.k, "K": self.K,
            "tq": self.thresholds.tq, "tu": self.thresholds.tu,
            "requested_tq": self.requested.tq, "requested_tu": self.requested.tu,
            "delta": self.delta, "delta_seq": list(self.delta_seq), "reps": self.reps,
            "rho_q": None if e is None else e.rho_q,
            "rho_u": None if e is None else e.rho_u,
            "distortion": self.distortion,
        }


def _stack(fams, K):
    if not fams:
        z = np.zeros((0, K), dtype=np.int64)
        return z, z.copy(), z.copy()
    a = np.array([f.a for f in fams], dtype=np.int64).reshape(-1, K)
    ai = np.array([f.ainv for f in fams], dtype=np.int64).reshape(-1, K)
    b = np.array([f.b for f in fams], dtype=np.int64).reshape(-1, K)
    return a, ai, b


def _on_grid(t, K):
    j = round(t * K)
    return abs(j / K - t) <= 1e-12


def make_config(params, thresholds, K, q, seed=0, reps=1, n=None, d=None,
                delta_seq=None, directions=None, requested=None, pilot=None):
    """Assemble a :class:`TreeConfig` from explicit ingredients.

    Parameters
    ----------
    thresholds : Thresholds
        Must be multiples of ``1/K`` and differ from the densities.
    delta_seq : sequence of int, optional
        Branching factors; by default derived from ``exp(D(T1||P1))``.
    directions : pair of int, optional
        Override the side directions, which default to the sign of ``t - w``.

    Raises
    ------
    ConfigurationError
        If the thresholds are off the grid, coincide with a density, or a
        branching factor exceeds ``q``.
    """
    K = int(K)
    if K < 1:
        raise ConfigurationError("K must be positive")
    tq, tu = thresholds.as_tuple()
    if not (_on_grid(tq, K) and _on_grid(tu, K)):
        raise ConfigurationError(f"thresholds {thresholds.as_tuple()} are not multiples of 1/{K}")
    if tq == params.wq or tu == params.wu:
        raise ConfigurationError("thresholds must differ from the set densities")
    exps = _safe_rho(params, thresholds)
    d1 = divergence_terms(params, thresholds)[0]
    delta = math.exp(d1) if math.isfinite(d1) else math.inf
    if delta_seq is None:
        if not math.isfinite(delta):
            raise ConfigurationError("infinite D(T1||P1): close pairs never collide")
        delta_seq = branching_sequence(delta, K)
    delta_seq = tuple(int(v) for v in delta_seq)
    if len(delta_seq) != K or min(delta_seq) < 1:
        raise ConfigurationError("need K positive branching factors")
    if max(delta_seq) > q:
        raise ConfigurationError(f"branching factor {max(delta_seq)} exceeds q = {q}")
    if directions is None:
        directions = (_direction(tq, params.wq), _direction(tu, params.wu))
    return TreeConfig(
        params=params, q=int(q), d=int(q if d is None else d), n=int(n or 0), k=2 * K, K=K,
        requested=requested or thresholds, thresholds=thresholds, delta=delta,
        delta_seq=delta_seq, reps=int(reps), seed=int(seed),
        directions=tuple(int(v) for v in directions), exponents=exps,
        requested_exponents=_safe_rho(params, requested) if requested is not None else exps,
        pilot=pilot,
    )


def _safe_rho(params, thresholds):
    try:
        return rho_pair(params, thresholds)
    except (ConfigurationError, ValueError):
        return None


def snap_thresholds(params, thresholds, K):
    """Nearest multiples of ``1/K`` with ``t != w`` that still give a gap."""
    def grid(t, w):
        c = [j / K for j in range(K + 1) if abs(j / K - w) > 1e-12]
        # prefer the nearer point, then the one on the requested side of w
        return sorted(c, key=lambda g: (round(abs(g - t), 12), (g > w) != (t > w)))

    cq = grid(thresholds.tq, params.wq)
    cu = grid(thresholds.tu, params.wu)
    combos = sorted(
        ((a, b) for a in cq for b in cu),
        key=lambda p: (round(max(abs(p[0] - thresholds.tq), abs(p[1] - thresholds.tu)), 12),
                       round(abs(p[0] - thresholds.tq) + abs(p[1] - thresholds.tu), 12),
                       cq.index(p[0]), cu.index(p[1])),
    )
    for a, b in combos:
        thr = Thresholds(a, b)
        try:
            e = rho_pair(params, thr)
        except (ConfigurationError, ValueError):
            continue
        if math.isfinite(e.rho_q) and math.isfinite(e.rho_u):
            return thr
    raise ConfigurationError(f"no grid point of step 1/{K} gives a gap")


# ---------------------------------------------------------------------------
# repetition pilot


def wilson_lower(successes, trials, z=1.645):
    """One-sided Wilson score lower confidence bound of a proportion."""
    if trials <= 0:
        return 0.0
    p = successes / trials
    den = 1.0 + z * z / trials
    centre = p + z * z / (2 * trials)
    rad = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials))
    return max(0.0, (centre - rad) / den)


def shared_counts(counts_a, hi_a, lo_a, counts_b, hi_b, lo_b):
    """Per-trial number of fingerprints present in both path lists."""
    T = len(counts_a)
    ta = np.repeat(np.arange(T), counts_a)
    tb = np.repeat(np.arange(T), counts_b)
    tr = np.concatenate([ta, tb])
    hi = np.concatenate([hi_a, hi_b])
    lo = np.concatenate([lo_a, lo_b])
    if tr.size < 2:
        return np.zeros(T, dtype=np.int64)
    o = np.lexsort((lo, hi, tr))
    tr, hi, lo = tr[o], hi[o], lo[o]
    dup = (tr[1:] == tr[:-1]) & (hi[1:] == hi[:-1]) & (lo[1:] == lo[:-1])
    return np.bincount(tr[1:][dup], minlength=T).astype(np.int64)


def pilot_collisions(config, pairs=100, seed=None, backend=None):
    """Count planted close pairs sharing a key in one repetition.

    Returns
    -------
    successes, trials : int
    """
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(PILOT_TAG,)))
    mq, mu, m1 = weights_for(config.params, config.q)
    xs, ys = [], []
    for _ in range(pairs):
        x, y = planted_pair(rng, config.d, mq, mu, m1)
        xs.append(x)
        ys.append(y)
    hit = np.ones(pairs, dtype=bool)
    for half in (1, 2):
        fams = [HashFamily.from_seed(seed, config.q, config.K, (PILOT_TAG + j, half))
                for j in range(pairs)]
        cx = _decode_many(config, xs, fams, "query", backend)
        cy = _decode_many(config, ys, fams, "update", backend)
        s = shared_counts(cx[0], cx[3], cx[4], cy[0], cy[3], cy[4])
        hit &= s > 0
    return int(hit.sum()), int(pairs)


def plan(params, thresholds=None, n=1024, d=None, reps=None, seed=0, target_recall=0.9,
         pilot_pairs=1000, max_reps=4096, backend=None):
    """Plan depth, thresholds, branching factors and repetitions.

    Parameters
    ----------
    thresholds : Thresholds, optional
        Requested thresholds; defaults to the balanced point.
    d : int, optional
        Universe the sets live in; defaults to ``ceil(20 ln n / w2)``.
    reps : int, optional
        Fixed repetition count. Otherwise a pilot over ``pilot_pairs``
        planted pairs estimates the per-repetition collision probability and
        ``R = ceil(ln(1/(1-target)) / p_lo)`` with ``p_lo`` its one-sided 95%
        Wilson lower bound.

    Raises
    ------
    ConfigurationError
        If ``w1 < wq wu``, the thresholds give no gap or snapping fails.
    """
    if not params.plannable():
        raise ConfigurationError("index planning needs w1 >= wq wu")
    if thresholds is None:
        from .exponents import balanced_point

        thresholds = balanced_point(params).thresholds
    n = int(n)
    k = tree_depth(max(n, 2), params, thresholds)
    K = k // 2
    snapped = snap_thresholds(params, thresholds, K)
    if d is None:
        d = int(math.ceil(20.0 * math.log(max(n, 2)) / params.w2))
    q = next_prime(d)
    base = make_config(params, snapped, K, q, seed=seed, reps=1, n=n, d=d,
                       requested=thresholds)
    if reps is not None:
        if int(reps) < 1:
            raise ConfigurationError("reps must be positive")
        return _replace(base, reps=int(reps))
    succ, trials = pilot_collisions(base, pilot_pairs, backend=backend)
    while succ == 0 and trials < 16 * pilot_pairs:
        more, extra = pilot_collisions(base, trials, seed=seed + trials, backend=backend)
        succ, trials = succ + more, trials + extra
    p_lo = wilson_lower(succ, trials)
    if succ == 0 or p_lo <= 0:
        warnings.warn(f"pilot saw no collisions in {trials} pairs; capping at {max_reps} reps",
                      RuntimeWarning, stacklevel=2)
        R = max_reps
    else:
        R = min(max_reps, max(1, math.ceil(math.log(1.0 / (1.0 - target_recall)) / p_lo)))
    return _replace(base, reps=R, pilot=(succ, trials))


def _replace(cfg, **kw):
    from dataclasses import replace

    return replace(cfg, **kw)


# ---------------------------------------------------------------------------
# decoding


@dataclass(frozen=True)
class DecodedPath:
    """A surviving root-to-leaf path and its score.

    ``score`` counts members of the decoded set on the path, or non-members
    for a side decoded in the ``<=`` direction.
    """

    elements: tuple
    score: int


def _decode_many(config, sets, fams, side, backend=None, schedule=None):
    be = get_backend(backend)
    sch = config.schedule(side) if schedule is None else schedule
    indptr, indices = to_csr(sets)
    a, ai, b = _stack(fams, config.K)
    fam = np.arange(len(sets), dtype=np.int64) if len(fams) == len(sets) else \
        np.zeros(len(sets), dtype=np.int64)
    return be.decode_csr(indptr, indices, config.q, a, ai, b, fam,
                         np.asarray(config.delta_seq, dtype=np.int64),
                         np.asarray(sch.reach, dtype=np.int64), sch.complement)


def decode_batch(config, indptr, indices, fam_rows, half_arrays, side, backend=None):
    """Decode a CSR batch; ``fam_rows[i]`` selects a row of ``half_arrays``."""
    be = get_backend(backend)
    sch = config.schedule(side)
    a, ai, b = half_arrays
    return be.decode_csr(indptr, indices, config.q, a, ai, b,
                         np.asarray(fam_rows, dtype=np.int64),
                         np.asarray(config.delta_seq, dtype=np.int64),
                         np.asarray(sch.reach, dtype=np.int64), sch.complement)


def decode(config, rep, half, X, t=None, side="query", direction=None, backend=None):
    """Surviving paths of one half-tree for the set ``X``.

    Parameters
    ----------
    t : float, optional
        Threshold overriding the configured one for ``side``.
    direction : int, optional
        ``+1`` or ``-1``; defaults to the configured direction of ``side``.

    Returns
    -------
    list of DecodedPath
        In breadth-first order, children by increasing admission value.
    """
    X = np.unique(np.asarray(X, dtype=np.int64))
    if X.size and (X[0] < 0 or X[-1] >= config.q):
        raise ValueError("set elements must lie in [0, q)")
    base = config.schedule(side)
    if t is None and direction is None:
        sch = base
    else:
        t = base.threshold if t is None else float(t)
        sch = SideSchedule.build(t, base.direction if direction is None else direction, config.K)
    fam = config.family(rep, half)
    counts, paths, scores, _, _ = _decode_many(config, [X], [fam], side, backend, schedule=sch)
    return [DecodedPath(tuple(int(v) for v in p), int(s)) for p, s in zip(paths, scores)]


# ---------------------------------------------------------------------------
# index


def pair_keys(hi1, lo1, hi2, lo2):
    """128-bit keys of tensored path pairs from the halves' fingerprints."""
    with np.errstate(over="ignore"):
        hi = mix64_np(np.asarray(hi1, dtype=np.uint64) ^ mix64_np(np.asarray(hi2, dtype=np.uint64) + _PAIR_A))
        lo = mix64_np(np.asarray(lo1, dtype=np.uint64) + mix64_np(np.asarray(lo2, dtype=np.uint64) ^ _PAIR_B))
    return hi, lo


def _cross(c1, hi1, lo1, c2, hi2, lo2):
    """Keys of all path pairs per set; returns ``(owner, key_hi, key_lo)``."""
    c1 = np.asarray(c1, dtype=np.int64)
    c2 = np.asarray(c2, dtype=np.int64)
    m = c1 * c2
    total = int(m.sum())
    owner = np.repeat(np.arange(len(m)), m)
    if total == 0:
        z = np.zeros(0, dtype=np.uint64)
        return owner, z, z.copy()
    o1 = np.concatenate([[0], np.cumsum(c1)[:-1]])
    o2 = np.concatenate([[0], np.cumsum(c2)[:-1]])
    start = np.concatenate([[0], np.cumsum(m)[:-1]])
    t = np.arange(total) - start[owner]
    j = o1[owner] + t // c2[owner]
    l = o2[owner] + t % c2[owner]
    hi, lo = pair_keys(hi1[j], lo1[j], hi2[l], lo2[l])
    return owner, hi, lo


@dataclass
class RepTable:
    """Sorted bucket table of one repetition."""

    key_hi: np.ndarray
    key_lo: np.ndarray
    ids: np.ndarray

    def __len__(self):
        return len(self.ids)

    def lookup(self, hi, lo):
        """Ids stored under each key, concatenated in key order."""
        s = np.searchsorted(self.key_hi, hi, side="left")
        e = np.searchsorted(self.key_hi, hi, side="right")
        ln = e - s
        tot = int(ln.sum())
        if tot == 0:
            return np.zeros(0, dtype=np.int64)
        grp = np.repeat(np.arange(len(s)), ln)
        pos = np.arange(tot) - np.repeat(np.cumsum(ln) - ln, ln) + s[grp]
        ok = self.key_lo[pos] == lo[grp]
        return self.ids[pos[ok]]


@dataclass
class FilterIndex:
    """Immutable tensored filter index over a fixed dataset."""

    config: TreeConfig
    indptr: np.ndarray
    indices: np.ndarray
    tables: list
    build_seconds: float = 0.0
    _fam: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_points(self):
        return len(self.indptr) - 1

    @property
    def entries(self):
        return int(sum(len(t) for t in self.tables))

    @property
    def nbytes(self):
        return int(sum(t.key_hi.nbytes + t.key_lo.nbytes + t.ids.nbytes for t in self.tables)
                   + self.indptr.nbytes + self.indices.nbytes)

    def point(self, i):
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def family_arrays(self, half):
        if half not in self._fam:
            self._fam[half] = self.config.family_arrays(half)
        return self._fam[half]

    def fingerprint(self):
        """SHA-256 over the serialized bytes."""
        import hashlib

        return hashlib.sha256(_encode_index(self)).hexdigest()


def _build_rep(config, rep, indptr, indices, backend, ceiling):
    n = len(indptr) - 1
    fam = np.zeros(n, dtype=np.int64)
    halves = []
    for half in (1, 2):
        arrs = _stack([config.family(rep, half)], config.K)
        c, _, _, hi, lo = decode_batch(config, indptr, indices, fam, arrs, "update", backend)
        halves.append((c, hi, lo))
    (c1, h1, l1), (c2, h2, l2) = halves
    per_point = c1 * c2
    if ceiling is not None and per_point.size and per_point.max() > ceiling:
        warnings.warn(f"repetition {rep}: a point produced {int(per_point.max())} keys "
                      f"(ceiling {ceiling})", CapacityWarning, stacklevel=3)
    owner, hi, lo = _cross(c1, h1, l1, c2, h2, l2)
    order = np.lexsort((owner, lo, hi))
    return RepTable(hi[order], lo[order], owner[order].astype(np.int64))


def build(config, dataset, backend=None, threads=None, key_ceiling=1 << 16):
    """Insert every point under each key pair of its two half-tree decodes.

    Parameters
    ----------
    dataset : list of array_like or (indptr, indices)
        Sorted element lists inside ``[0, q)``.
    threads : int, optional
        Worker threads over repetitions; defaults to ``SMJ_THREADS`` or the
        CPU count.
    key_ceiling : int, optional
        Per-point key count above which a :class:`CapacityWarning` is issued.
    """
    t0 = time.perf_counter()
    if isinstance(dataset, tuple) and len(dataset) == 2:
        indptr, indices = (np.asarray(v, dtype=np.int64) for v in dataset)
    else:
        indptr, indices = to_csr(list(dataset))
    if indices.size and (indices.min() < 0 or indices.max() >= config.q):
        raise ValueError("set elements must lie in [0, q)")
    threads = _threads() if threads is None else max(1, int(threads))
    work = lambda r: _build_rep(config, r, indptr, indices, backend, key_ceiling)  # noqa: E731
    if threads == 1 or config.reps == 1:
        tables = [work(r) for r in range(config.reps)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            tables = list(ex.map(work, range(config.reps)))
    return FilterIndex(config, indptr, indices, tables, time.perf_counter() - t0)


# ---------------------------------------------------------------------------
# queries


@dataclass
class QueryReport:
    """Outcome and cost counters of one query.

    ``candidates`` counts every id read from a bucket, ``verified`` the
    distinct ids whose overlap was tested.
    """

    matched: Optional[int]
    overlap: int
    candidates: int
    verified: int
    paths: int
    seconds: float


def _overlaps(index, member, ids):
    if ids.size == 0:
        return np.zeros(0, dtype=np.int64)
    s = index.indptr[ids]
    ln = index.indptr[ids + 1] - s
    tot = int(ln.sum())
    if tot == 0:
        return np.zeros(ids.size, dtype=np.int64)
    grp = np.repeat(np.arange(ids.size), ln)
    pos = np.arange(tot) - np.repeat(np.cumsum(ln) - ln, ln) + np.repeat(s, ln)
    return np.bincount(grp, weights=member[index.indices[pos]], minlength=ids.size).astype(np.int64)


def _sampled_overlaps(index, member, ids, m, rng):
    out = np.zeros(ids.size, dtype=np.int64)
    for j, i in enumerate(ids):
        y = index.point(int(i))
        if y.size == 0:
            continue
        pick = y[rng.integers(0, y.size, size=m)]
        out[j] = int(round(member[pick].mean() * y.size))
    return out


def query_batch(index, queries, mode="first", verify="exact", backend=None, sample_c=4.0,
                seed=0, chunk=64):
    """Answer several queries; see :func:`query`."""
    if mode not in ("first", "best"):
        raise ValueError("mode must be 'first' or 'best'")
    if verify not in ("exact", "sample"):
        raise ValueError("verify must be 'exact' or 'sample'")
    cfg = index.config
    p = cfg.params
    limit = p.w2 * cfg.q
    accept = limit
    m = None
    rng = None
    if verify == "sample":
        m = int(math.ceil(sample_c * min(p.wq, p.wu) / p.w2 * math.log(max(index.n_points, 2))))
        accept = 0.5 * (p.w1 + p.w2) * cfg.q
        rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(7,)))
    R = cfg.reps
    fa = (index.family_arrays(1), index.family_arrays(2))
    reports = []
    member = np.zeros(cfg.q, dtype=np.float64)
    queries = [np.unique(np.asarray(x, dtype=np.int64)) for x in queries]
    for c0 in range(0, len(queries), chunk):
        part = queries[c0:c0 + chunk]
        t0 = time.perf_counter()
        rows = [x for x in part for _ in range(R)]
        indptr, indices = to_csr(rows)
        fam = np.tile(np.arange(R, dtype=np.int64), len(part))
        dec = [decode_batch(cfg, indptr, indices, fam, fa[h], "query", backend) for h in (0, 1)]
        off = [np.concatenate([[0], np.cumsum(d[0])]) for d in dec]
        share = (time.perf_counter() - t0) / max(len(part), 1)
        for qi, x in enumerate(part):
            t1 = time.perf_counter()
            member[x] = 1.0
            seen = set()
            n_cand = n_ver = n_paths = 0
            best_id, best_ov = None, -1
            for r in range(R):
                row = qi * R + r
                segs = []
                for h in (0, 1):
                    c, _, _, hi, lo = dec[h]
                    a, b = off[h][row], off[h][row + 1]
                    segs.append((np.array([b - a]), hi[a:b], lo[a:b]))
                    n_paths += int(b - a)
                _, kh, kl = _cross(*segs[0], *segs[1])
                if kh.size == 0:
                    continue
                ids = index.tables[r].lookup(kh, kl)
                if ids.size == 0:
                    continue
                _, first = np.unique(ids, return_index=True)
                fresh = ids[np.sort(first)]
                fresh = np.array([i for i in fresh.tolist() if i not in seen], dtype=np.int64)
                if fresh.size == 0:
                    n_cand += int(ids.size)
                    continue
                if m is None:
                    ov = _overlaps(index, member, fresh)
                else:
                    ov = _sampled_overlaps(index, member, fresh, m, rng)
                ok = np.flatnonzero(ov > accept)
                if mode == "first" and ok.size:
                    j = int(ok[0])
                    hit = int(fresh[j])
                    # count entries read up to and including the first hit
                    n_cand += int(np.flatnonzero(ids == hit)[0]) + 1
                    n_ver += j + 1
                    best_id, best_ov = hit, int(ov[j])
                    break
                n_cand += int(ids.size)
                n_ver += int(fresh.size)
                seen.update(fresh.tolist())
                if ok.size:
                    j = int(ok[np.argmax(ov[ok])])
                    if ov[j] > best_ov:
                        best_id, best_ov = int(fresh[j]), int(ov[j])
            member[x] = 0.0
            reports.append(QueryReport(best_id, max(best_ov, 0) if best_id is not None else 0,
                                       n_cand, n_ver, n_paths,
                                       share + time.perf_counter() - t1))
    return reports


def query(index, x, mode="first", verify="exact", backend=None, **kw):
    """Decode ``x`` in every repetition, scan its buckets and verify candidates.

    Parameters
    ----------
    mode : {"first", "best"}
        Stop at the first candidate with overlap above ``w2 q``, or scan all
        buckets and return the one with the largest overlap.
    verify : {"exact", "sample"}
        Exact intersection, or an estimate from
        ``ceil(c min(wq, wu) / w2 ln n)`` sampled elements of each candidate
        tested against the midpoint ``(w1 + w2) q / 2``.
    """
    return query_batch(index, [x], mode=mode, verify=verify, backend=backend, **kw)[0]


# ---------------------------------------------------------------------------
# serialization


def _encode_config(cfg):
    p = cfg.params
    succ, trials = cfg.pilot if cfg.pilot is not None else (-1, -1)
    head = _CONFIG.pack(cfg.q, cfg.d, cfg.n, cfg.seed, cfg.k, cfg.K, cfg.reps, succ, trials,
                        p.wq, p.wu, p.w1, p.w2, cfg.requested.tq, cfg.requested.tu,
                        cfg.thresholds.tq, cfg.thresholds.tu, *cfg.directions)
    return head + np.asarray(cfg.delta_seq, dtype="<u8").tobytes()


def _encode_index(index):
    parts = [SMJ_MAGIC, struct.pack("<H", SMJ_VERSION), _encode_config(index.config)]
    parts.append(struct.pack("<Q", index.n_points))
    parts.append(np.asarray(index.indptr, dtype="<u8").tobytes())
    parts.append(np.asarray(index.indices, dtype="<u4").tobytes())
    for t in index.tables:
        parts.append(struct.pack("<Q", len(t)))
        parts.append(np.asarray(t.key_hi, dtype="<u8").tobytes())
        parts.append(np.asarray(t.key_lo, dtype="<u8").tobytes())
        parts.append(np.asarray(t.ids, dtype="<u8").tobytes())
    return b"".join(parts)


def save_index(index, path):
    with open(path, "wb") as fh:
        fh.write(_encode_index(index))


def load_index(path):
    """Read an SMJ1 file written by :func:`save_index`."""
    from .instance import MalformedFileError

    with open(path, "rb") as fh:
        buf = fh.read()
    off = 0

    def take(size, what):
        nonlocal off
        if off + size > len(buf):
            raise MalformedFileError(f"truncated while reading {what}", off)
        out = buf[off:off + size]
        off += size
        return out

    if take(4, "magic") != SMJ_MAGIC:
        raise MalformedFileError("bad magic", 0)
    (ver,) = struct.unpack("<H", take(2, "version"))
    if ver != SMJ_VERSION:
        raise MalformedFileError(f"unsupported version {ver}", 4)
    (q, d, n, seed, k, K, reps, succ, trials, wq, wu, w1, w2, rq, ru, tq, tu, dq, du) = \
        _CONFIG.unpack(take(_CONFIG.size, "config"))
    delta_seq = np.frombuffer(take(8 * K, "branching factors"), dtype="<u8")
    params = GapParams(wq, wu, w1, w2)
    cfg = make_config(params, Thresholds(tq, tu), K, q, seed=seed, reps=reps, n=n, d=d,
                      delta_seq=delta_seq.tolist(), directions=(dq, du),
                      requested=Thresholds(rq, ru),
                      pilot=None if succ < 0 else (int(succ), int(trials)))
    (npts,) = struct.unpack("<Q", take(8, "point count"))
    indptr = np.frombuffer(take(8 * (npts + 1), "offsets"), dtype="<u8").astype(np.int64)
    indices = np.frombuffer(take(4 * int(indptr[-1]), "elements"), dtype="<u4").astype(np.int64)
    tables = []
    for r in range(reps):
        (cnt,) = struct.unpack("<Q", take(8, f"size of repetition {r}"))
        hi = np.frombuffer(take(8 * cnt, "key_hi"), dtype="<u8").astype(np.uint64)
        lo = np.frombuffer(take(8 * cnt, "key_lo"), dtype="<u8").astype(np.uint64)
        ids = np.frombuffer(take(8 * cnt, "ids"), dtype="<u8").astype(np.int64)
        tables.append(RepTable(hi, lo, ids))
    if off != len(buf):
        raise MalformedFileError("trailing bytes", off)
    return FilterIndex(cfg, indptr, indices, tables)

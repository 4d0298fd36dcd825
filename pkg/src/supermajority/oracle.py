"""Exact and Monte Carlo oracles for the random-walk lemmas and filter moments.

The exact engines work in rational arithmetic (``fractions.Fraction``), so
probabilities far below double-precision underflow stay meaningful.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from ._backend import get_backend
from .divergence import GapParams, kl_binary
from .exponents import divergence_terms
from .instance import weights_for

__all__ = [
    "WalkLaw",
    "PreconditionError",
    "quadrant_exact",
    "quadrant_brute_force",
    "point_mass_exact",
    "rearrangement_exact",
    "rearrangement_brute_force",
    "quadrant_bound",
    "point_mass_bound",
    "rearrangement_bound",
    "brute_force_decode",
    "expected_paths_exact",
    "expected_shared_exact",
    "MomentEstimate",
    "mc_filter_moments",
    "RELATIONS",
]

RELATIONS = ("single-query", "single-update", "close", "far")


class PreconditionError(ValueError):
    """Arguments outside the range a lemma is stated for."""


def _frac(v):
    if isinstance(v, Fraction):
        return v
    if isinstance(v, int):
        return Fraction(v)
    return Fraction(str(v))


@dataclass(frozen=True)
class WalkLaw:
    """Step law of a 2-d Bernoulli walk.

    ``Pr[(1,1)] = p``, ``Pr[(1,0)] = p1 - p``, ``Pr[(0,1)] = p2 - p`` and
    ``Pr[(0,0)] = 1 - p1 - p2 + p``. Values are held as exact fractions;
    floats are read through their shortest decimal representation.
    """

    p: Fraction
    p1: Fraction
    p2: Fraction

    def __post_init__(self):
        for name in ("p", "p1", "p2"):
            object.__setattr__(self, name, _frac(getattr(self, name)))
        if any(c < 0 for c in self.cells):
            raise PreconditionError(f"negative cell in {self.cells}")
        if self.p < self.p1 * self.p2:
            raise PreconditionError("coordinates must be positively correlated (p >= p1 p2)")

    @property
    def cells(self):
        """``(Pr[11], Pr[10], Pr[01], Pr[00])``."""
        p, p1, p2 = self.p, self.p1, self.p2
        return (p, p1 - p, p2 - p, 1 - p1 - p2 + p)

    def targets(self, k):
        a, b = self.p1 * k, self.p2 * k
        if a.denominator != 1 or b.denominator != 1:
            raise PreconditionError("p1 k and p2 k must be integers")
        return int(a), int(b)


_STEPS = ((1, 1), (1, 0), (0, 1), (0, 0))


def quadrant_exact(k, law):
    """``Pr[for all l <= k: sum_{i<=l} X_i <= (p1, p2) l]`` componentwise."""
    law.targets(k)
    cells = law.cells
    states = {(0, 0): Fraction(1)}
    for l in range(1, k + 1):
        cap1, cap2 = law.p1 * l, law.p2 * l
        nxt = {}
        for (a, b), pr in states.items():
            for (dx, dy), c in zip(_STEPS, cells):
                if c == 0:
                    continue
                s = (a + dx, b + dy)
                if s[0] <= cap1 and s[1] <= cap2:
                    nxt[s] = nxt.get(s, 0) + pr * c
        states = nxt
    return sum(states.values(), Fraction(0))


def quadrant_brute_force(k, law):
    """:func:`quadrant_exact` by enumerating all ``4^k`` step sequences."""
    law.targets(k)
    total = Fraction(0)
    cells = law.cells
    for seq in itertools.product(range(4), repeat=k):
        a = b = 0
        pr = Fraction(1)
        ok = True
        for l, s in enumerate(seq, start=1):
            pr *= cells[s]
            a += _STEPS[s][0]
            b += _STEPS[s][1]
            if a > law.p1 * l or b > law.p2 * l:
                ok = False
                break
        if ok:
            total += pr
    return total


def _multinomial(k, parts):
    out = math.factorial(k)
    for x in parts:
        out //= math.factorial(x)
    return out


def point_mass_exact(k, law):
    """``Pr[sum X = (p1 k, p2 k) and sum X1 X2 = ceil(p k)]``."""
    a, b = law.targets(k)
    n11 = math.ceil(law.p * k)
    n10, n01 = a - n11, b - n11
    n00 = k - n11 - n10 - n01
    counts = (n11, n10, n01, n00)
    if min(counts) < 0:
        return Fraction(0)
    pr = Fraction(_multinomial(k, counts))
    for c, e in zip(law.cells, counts):
        if e:
            pr *= c ** e
    return pr


def _arrangement_counts(k, law):
    a, b = law.targets(k)
    pk = law.p * k
    if pk.denominator != 1:
        raise PreconditionError("p k must be an integer")
    n11 = int(pk)
    counts = (n11, a - n11, b - n11, k - a - b + n11)
    if min(counts) < 0:
        raise PreconditionError("no step multiset with these totals")
    return counts


def rearrangement_exact(k, law, kmax=12):
    """Share of orderings of the mean step multiset whose prefixes stay above the mean.

    The multiset has ``p k`` steps ``(1,1)``, ``(p1 - p) k`` steps ``(1,0)``,
    ``(p2 - p) k`` steps ``(0,1)`` and the rest ``(0,0)``; every ordering is
    equally likely given the totals.
    """
    if k > kmax:
        raise PreconditionError(f"k = {k} exceeds the enumeration limit {kmax}")
    counts = _arrangement_counts(k, law)
    # ways[(u11, u10, u01)] counts admissible prefixes; u00 follows from the length
    ways = {(0, 0, 0): 1}
    for l in range(1, k + 1):
        nxt = {}
        for (u11, u10, u01), w in ways.items():
            u00 = l - 1 - u11 - u10 - u01
            used = (u11, u10, u01, u00)
            for t in range(4):
                if used[t] == counts[t]:
                    continue
                v = list(used)
                v[t] += 1
                if v[0] + v[1] < law.p1 * l or v[0] + v[2] < law.p2 * l:
                    continue
                key = (v[0], v[1], v[2])
                nxt[key] = nxt.get(key, 0) + w
        ways = nxt
    good = sum(ways.values())
    return Fraction(good, _multinomial(k, counts))


def rearrangement_brute_force(k, law):
    """:func:`rearrangement_exact` by listing distinct permutations."""
    counts = _arrangement_counts(k, law)
    items = [s for s, c in enumerate(counts) for _ in range(c)]
    perms = set(itertools.permutations(items))
    good = 0
    for seq in perms:
        a = b = 0
        for l, s in enumerate(seq, start=1):
            a += _STEPS[s][0]
            b += _STEPS[s][1]
            if a < law.p1 * l or b < law.p2 * l:
                break
        else:
            good += 1
    return Fraction(good, len(perms))


def quadrant_bound(k):
    return 1.0 / (400.0 * k ** 6.5)


def point_mass_bound(k):
    return k ** -3.5 / 400.0


def rearrangement_bound(k):
    return float(k) ** -3


# ---------------------------------------------------------------------------
# filter-tree oracles


def brute_force_decode(q, a, b, delta, need, X, complement=False):
    """All paths of ``[q]^K`` passing the admissions and the trimming rule.

    Parameters
    ----------
    a, b : sequence of int
        Per-level coefficients and offsets.
    need : sequence of int
        Least score after each level.

    Returns
    -------
    ndarray, shape (m, K)
        Surviving paths in lexicographic order.
    """
    K = len(delta)
    grids = np.indices((q,) * K).reshape(K, -1).T.astype(np.int64)
    member = np.zeros(q, dtype=bool)
    member[np.asarray(X, dtype=np.int64)] = True
    ok = np.ones(len(grids), dtype=bool)
    acc = np.zeros(len(grids), dtype=np.int64)
    score = np.zeros(len(grids), dtype=np.int64)
    for l in range(K):
        acc = (acc + int(a[l]) * grids[:, l]) % q
        ok &= (acc + int(b[l])) % q < min(int(delta[l]), q)
        m = member[grids[:, l]]
        score += (~m if complement else m)
        ok &= score >= int(need[l])
    return grids[ok]


def _level_probs(delta, q):
    return [Fraction(min(int(d), q), q) for d in delta]


def expected_paths_exact(delta, need, density, q):
    """``E|R_K(X, t)|`` for a fixed set of density ``density`` under random hashing.

    Path elements are uniform on ``[q]``, so the expectation is the product
    of the admission rates times ``q^K``, times the probability that an
    i.i.d. Bernoulli(``density``) walk meets every ``need`` level.
    """
    w = _frac(density)
    states = {0: Fraction(1)}
    for l, nd in enumerate(need):
        nxt = {}
        for s, pr in states.items():
            for step, c in ((1, w), (0, 1 - w)):
                if c and s + step >= nd:
                    nxt[s + step] = nxt.get(s + step, 0) + pr * c
        states = nxt
    surv = sum(states.values(), Fraction(0))
    mult = 1
    for d in delta:
        mult *= min(int(d), q)
    return surv * mult


def expected_shared_exact(delta, need_x, need_y, cells, q):
    """``E|R_K(x, t_x) & R_K(y, t_y)|`` with element categories ``cells``.

    ``cells`` are the probabilities of ``(in x and y, x only, y only,
    neither)`` for a uniform element, already oriented so that scores count
    in the decoding direction of each side.
    """
    cells = [_frac(c) for c in cells]
    states = {(0, 0): Fraction(1)}
    for l in range(len(delta)):
        nxt = {}
        for (sx, sy), pr in states.items():
            for (dx, dy), c in zip(_STEPS, cells):
                if c == 0:
                    continue
                s = (sx + dx, sy + dy)
                if s[0] >= need_x[l] and s[1] >= need_y[l]:
                    nxt[s] = nxt.get(s, 0) + pr * c
        states = nxt
    surv = sum(states.values(), Fraction(0))
    mult = 1
    for d in delta:
        mult *= min(int(d), q)
    return surv * mult


def _oriented_cells(m11, mx, my, q, cx, cy):
    """Element categories relative to the scores each side counts."""
    a = Fraction(m11, q)
    b = Fraction(mx - m11, q)
    c = Fraction(my - m11, q)
    d = 1 - a - b - c
    # index by (member of x, member of y)
    by = {(1, 1): a, (1, 0): b, (0, 1): c, (0, 0): d}
    out = []
    for sx, sy in _STEPS:
        ix = sx if not cx else 1 - sx
        iy = sy if not cy else 1 - sy
        out.append(by[(ix, iy)])
    return out


@dataclass(frozen=True)
class MomentEstimate:
    """Monte Carlo estimate of a filter moment with its references.

    Attributes
    ----------
    mean, stderr : float
        Empirical mean and its standard error.
    hit_rate : float
        Fraction of trials with a non-zero count.
    exact : float
        Exact expectation under uniform random hashing.
    bound : float or None
        Upper bound ``2 Delta^K exp(-K D)`` (``None`` for close pairs).
    passed : bool or None
        ``mean - 3 stderr <= bound``, or ``None`` without a bound.
    """

    relation: str
    trials: int
    mean: float
    stderr: float
    hit_rate: float
    exact: float
    bound: Optional[float]
    passed: Optional[bool]

    @property
    def z_exact(self):
        """Standardized distance of the estimate from the exact value."""
        if self.stderr == 0:
            return 0.0 if self.mean == self.exact else math.inf
        return (self.mean - self.exact) / self.stderr


def _modinv_np(a, q):
    out = np.ones_like(a)
    base = a % q
    e = q - 2
    while e:
        if e & 1:
            out = (out * base) % q
        base = (base * base) % q
        e >>= 1
    return out


def _permutations(rng, rows, d):
    """Independent random permutations of ``[0, d)``; prefixes give nested subsets."""
    return rng.permuted(np.tile(np.arange(d, dtype=np.int64), (rows, 1)), axis=1)


def mc_filter_moments(config, relation, trials=10**5, seed=0, params=None, backend=None,
                      chunk=5000):
    """Monte Carlo over fresh hash families and fresh sets of exact weight.

    Parameters
    ----------
    relation : {"single-query", "single-update", "close", "far"}
        Count ``|R_K|`` of one query or data set, or ``|R_K(x) & R_K(y)|``
        for a pair with overlap ``round(w1 q)`` or ``round(w2 q)``.
    params : GapParams, optional
        Defaults to ``config.params``.

    Notes
    -----
    Bounds use the realized set densities ``round(w q) / q``.
    """
    if relation not in RELATIONS:
        raise ValueError(f"relation must be one of {RELATIONS}")
    if trials < 1000:
        raise ValueError("use at least 1000 trials")
    params = config.params if params is None else params
    be = get_backend(backend)
    q, K, d = config.q, config.K, config.d
    mq, mu, m1 = weights_for(params, q)
    m2 = int(round(params.w2 * q))
    delta = np.asarray(config.delta_seq, dtype=np.int64)
    sq, su = config.schedule("query"), config.schedule("update")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0x4D43,)))
    total = 0.0
    total_sq = 0.0
    hits = 0
    done = 0
    while done < trials:
        rows = min(chunk, trials - done)
        a = rng.integers(1, q, size=(rows, K), dtype=np.int64)
        b = rng.integers(0, q, size=(rows, K), dtype=np.int64)
        ai = _modinv_np(a, q)
        fam = np.arange(rows, dtype=np.int64)
        perm = _permutations(rng, rows, d)
        if relation in ("single-query", "single-update"):
            m = mq if relation == "single-query" else mu
            sch = sq if relation == "single-query" else su
            sets = np.sort(perm[:, :m], axis=1)
            indptr = np.arange(rows + 1, dtype=np.int64) * m
            c = be.decode_csr(indptr, sets.ravel(), q, a, ai, b, fam, delta,
                              np.asarray(sch.reach, dtype=np.int64), sch.complement)[0]
            vals = c.astype(np.float64)
        else:
            m = m1 if relation == "close" else m2
            xs = np.sort(perm[:, :mq], axis=1)
            ys = np.sort(np.concatenate([perm[:, :m], perm[:, mq:mq + mu - m]], axis=1), axis=1)
            ipx = np.arange(rows + 1, dtype=np.int64) * mq
            ipy = np.arange(rows + 1, dtype=np.int64) * mu
            rx = be.decode_csr(ipx, xs.ravel(), q, a, ai, b, fam, delta,
                               np.asarray(sq.reach, dtype=np.int64), sq.complement)
            ry = be.decode_csr(ipy, ys.ravel(), q, a, ai, b, fam, delta,
                               np.asarray(su.reach, dtype=np.int64), su.complement)
            from .lsf_index import shared_counts

            vals = shared_counts(rx[0], rx[3], rx[4], ry[0], ry[3], ry[4]).astype(np.float64)
        total += float(vals.sum())
        total_sq += float((vals * vals).sum())
        hits += int(np.count_nonzero(vals))
        done += rows
    mean = total / trials
    var = max(total_sq / trials - mean * mean, 0.0) * trials / (trials - 1)
    se = math.sqrt(var / trials)
    t = config.thresholds
    Kf = K
    if relation in ("single-query", "single-update"):
        m, sch, thr = (mq, sq, t.tq) if relation == "single-query" else (mu, su, t.tu)
        exact = expected_paths_exact(delta, sch.need, Fraction(m if not sch.complement else q - m, q), q)
        bound = 2.0 * config.delta ** Kf * math.exp(-Kf * kl_binary(thr, m / q))
    else:
        m = m1 if relation == "close" else m2
        cells = _oriented_cells(m, mq, mu, q, sq.complement, su.complement)
        exact = expected_shared_exact(delta, sq.need, su.need, cells, q)
        if relation == "far":
            real = GapParams(mq / q, mu / q, max(m1, m + 1) / q, m / q)
            d2 = divergence_terms(real, t)[1]
            bound = 2.0 * config.delta ** Kf * math.exp(-Kf * d2)
        else:
            bound = None
    passed = None if bound is None else bool(mean - 3.0 * se <= bound)
    return MomentEstimate(relation, int(trials), mean, se, hits / trials, float(exact),
                          bound, passed)

"""Query and update exponents of supermajority filters, and the baselines.

The central quantity is the pair

    rho_q = (D(T1||P1) - d(tq||wq)) / (D(T2||P2) - d(tq||wq))
    rho_u = (D(T1||P1) - d(tu||wu)) / (D(T2||P2) - d(tq||wq))

where ``T`` is the 2x2 target with marginals ``(tq, tu)`` closest to the
ambient matrix ``P`` of close (``w1``) or far (``w2``) pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .divergence import (
    INF,
    GapParams,
    InfeasibleError,
    Thresholds,
    ambient,
    joint_divergence_np,
    joint_from_marginals,
    kl_binary,
    kl_binary_np,
    kl_joint,
    optimize_inner,
    optimize_inner_np,
)

__all__ = [
    "ConfigurationError",
    "ExponentPair",
    "TradeoffPoint",
    "EmbeddingResult",
    "divergence_terms",
    "rho_pair",
    "rho_grid",
    "tree_depth",
    "tradeoff_curve",
    "balanced_point",
    "best_linear_combination",
    "balanced_closed_form",
    "subset_closed_form",
    "endpoint_thresholds",
    "lower_bound_symmetric",
    "lower_bound_random",
    "spherical_embedding",
    "baseline_rhos",
    "minhash_rho",
    "chosen_path_rho",
    "spherical_tradeoff",
    "minhash_family_rho",
    "minhash_dominating",
    "embedding_rho",
    "embedding_grid_check",
    "optimal_threshold_identity_check",
]

GRID_LO, GRID_HI = 0.001, 0.999


class ConfigurationError(ValueError):
    """Thresholds that give no gap between close and far pairs."""


@dataclass(frozen=True)
class ExponentPair:
    rho_q: float
    rho_u: float

    def combo(self, alpha):
        return alpha * self.rho_q + (1.0 - alpha) * self.rho_u


@dataclass(frozen=True)
class TradeoffPoint:
    thresholds: Thresholds
    exponents: ExponentPair


@dataclass(frozen=True)
class EmbeddingResult:
    alpha: float
    beta: float


# ---------------------------------------------------------------------------
# scalar pipeline


def _joint_min(tq, tu, P):
    try:
        t1 = optimize_inner(tq, tu, P)
    except InfeasibleError:
        return INF
    return kl_joint(joint_from_marginals(tq, tu, t1), P)


def divergence_terms(params, thresholds):
    """Return ``(D(T1||P1), D(T2||P2), d(tq||wq), d(tu||wu))``."""
    tq, tu = thresholds.as_tuple()
    d1 = _joint_min(tq, tu, ambient(params))
    d2 = _joint_min(tq, tu, ambient(params, far=True))
    return d1, d2, kl_binary(tq, params.wq), kl_binary(tu, params.wu)


def rho_pair(params, thresholds):
    """Exponents of the filter with the given thresholds.

    Raises
    ------
    ConfigurationError
        If ``D(T2||P2) - d(tq||wq)`` is not positive or a divergence is
        infinite.
    """
    d1, d2, dq, du = divergence_terms(params, thresholds)
    den = d2 - dq
    if not math.isfinite(d1) or not math.isfinite(den) or den <= 1e-14:
        raise ConfigurationError(
            f"thresholds {thresholds.as_tuple()} give no gap (denominator {den})"
        )
    # both numerators are non-negative in exact arithmetic
    rq = (d1 - dq) / den
    ru = (d1 - du) / den
    return ExponentPair(max(rq, 0.0) if rq > -1e-12 else rq,
                        max(ru, 0.0) if ru > -1e-12 else ru)


# ---------------------------------------------------------------------------
# vectorized pipeline


def _joint_min_np(tq, tu, w, wq, wu):
    t1 = optimize_inner_np(tq, tu, w, wq, wu)
    out = joint_divergence_np(tq, tu, t1, w, wq, wu)
    bad = np.isnan(t1)
    if np.any(bad):
        # zero cells in the ambient matrix: fall back to the scalar solver
        P = joint_from_marginals(float(wq.flat[0]), float(wu.flat[0]), float(w.flat[0]))
        flat = out.reshape(-1)
        for idx in np.flatnonzero(bad.reshape(-1)):
            flat[idx] = _joint_min(float(tq.flat[idx]), float(tu.flat[idx]), P)
    return out


def _terms_np(params, tq, tu):
    tq, tu = np.broadcast_arrays(np.asarray(tq, float), np.asarray(tu, float))
    tq = np.array(tq)
    tu = np.array(tu)
    full = lambda v: np.full(tq.shape, v)  # noqa: E731
    wq, wu = full(params.wq), full(params.wu)
    d1 = _joint_min_np(tq, tu, full(params.w1), wq, wu)
    d2 = _joint_min_np(tq, tu, full(params.w2), wq, wu)
    return d1, d2, kl_binary_np(tq, params.wq), kl_binary_np(tu, params.wu)


def rho_grid(params, tq, tu):
    """Vectorized exponents; ``nan`` where the configuration has no gap."""
    d1, d2, dq, du = _terms_np(params, tq, tu)
    den = d2 - dq
    ok = np.isfinite(d1) & np.isfinite(den) & (den > 1e-12)
    with np.errstate(divide="ignore", invalid="ignore"):
        rq = np.where(ok, (d1 - dq) / den, np.nan)
        ru = np.where(ok, (d1 - du) / den, np.nan)
    return rq, ru


def _minimize_2d(objective, candidates=(), grid=64, starts=5, rounds=30, sub=15):
    """Minimize a vectorized objective over thresholds in ``[0, 1]^2``.

    A coarse grid over the open square seeds ``starts`` local searches,
    each of which repeatedly evaluates a small grid around its incumbent
    and shrinks the window. Extra candidate points join the start pool.
    Returns ``(tq, tu, value)``; the value is ``inf`` if nothing is feasible.
    """
    ax = np.linspace(GRID_LO, GRID_HI, grid)
    TQ, TU = np.meshgrid(ax, ax, indexing="ij")
    pts_q = np.concatenate([TQ.ravel(), [c[0] for c in candidates]])
    pts_u = np.concatenate([TU.ravel(), [c[1] for c in candidates]])
    vals = np.asarray(objective(pts_q, pts_u), dtype=float)
    vals = np.where(np.isnan(vals), np.inf, vals)
    order = np.argsort(vals, kind="stable")
    chosen = [i for i in order[:starts] if np.isfinite(vals[i])]
    # candidates are always refined, they often sit on the boundary
    chosen += [grid * grid + j for j in range(len(candidates))
               if np.isfinite(vals[grid * grid + j])]
    if not chosen:
        return (math.nan, math.nan, math.inf)
    centers = np.array([[pts_q[i], pts_u[i]] for i in chosen])
    best = np.array([vals[i] for i in chosen])
    h = (GRID_HI - GRID_LO) / (grid - 1)
    off = np.linspace(-1.0, 1.0, sub)
    OQ, OU = np.meshgrid(off, off, indexing="ij")
    OQ, OU = OQ.ravel(), OU.ravel()
    for _ in range(rounds):
        q = np.clip(centers[:, :1] + h * OQ[None, :], 0.0, 1.0)
        u = np.clip(centers[:, 1:] + h * OU[None, :], 0.0, 1.0)
        v = np.asarray(objective(q.ravel(), u.ravel()), dtype=float).reshape(q.shape)
        v = np.where(np.isnan(v), np.inf, v)
        j = np.argmin(v, axis=1)
        rows = np.arange(len(centers))
        better = v[rows, j] < best
        centers[better, 0] = q[rows, j][better]
        centers[better, 1] = u[rows, j][better]
        best = np.where(better, v[rows, j], best)
        h /= 3.0
    k = int(np.argmin(best))
    return (float(centers[k, 0]), float(centers[k, 1]), float(best[k]))


def _standard_candidates(params):
    cands = [(1.0 - params.wu, 1.0 - params.wq), (1.0, 1.0), (0.0, 0.0)]
    for side in ("query", "update"):
        try:
            t = endpoint_thresholds(params, side)
        except (InfeasibleError, ConfigurationError):
            continue
        cands.append(t.as_tuple())
    return cands


def _point(params, tq, tu):
    thr = Thresholds(tq, tu)
    return TradeoffPoint(thr, rho_pair(params, thr))


# ---------------------------------------------------------------------------
# depth, trade-off curve, balanced point


def tree_depth(n, params, thresholds):
    """Smallest even ``k`` with ``k >= ln(n) / (D(T2||P2) - d(tq||wq))``."""
    if n < 2:
        raise ValueError("n must be at least 2")
    _, d2, dq, _ = divergence_terms(params, thresholds)
    den = d2 - dq
    if not math.isfinite(den) or den <= 1e-14:
        raise ConfigurationError("thresholds give no gap")
    need = math.log(n) / den
    k = 2 * math.ceil(need / 2.0 - 1e-12)
    return max(2, int(k))


def tradeoff_curve(params, budget_grid, grid=64, starts=5):
    """Thresholds minimizing ``rho_q`` subject to ``rho_u <= b`` per budget.

    The returned list follows the order of ``budget_grid``. Points are made
    monotone: a larger budget never yields a larger ``rho_q``.
    """
    budgets = [float(b) for b in budget_grid]
    cands = _standard_candidates(params)
    raw = {}
    for b in sorted(set(budgets)):
        def obj(q, u, b=b):
            rq, ru = rho_grid(params, q, u)
            return np.where(ru <= b + 1e-12, rq, np.inf)

        tq, tu, val = _minimize_2d(obj, cands, grid=grid, starts=starts)
        if not math.isfinite(val):
            t = endpoint_thresholds(params, "update")
            tq, tu = t.as_tuple()
        raw[b] = _point(params, tq, tu)
    best = None
    for b in sorted(raw):
        p = raw[b]
        if best is not None and best.exponents.rho_q < p.exponents.rho_q \
                and best.exponents.rho_u <= b + 1e-12:
            p = best
        raw[b] = best = p
    return [raw[b] for b in budgets]


def _tu_on_balance(dq, wu, upper):
    """Solve ``d(tu||wu) = dq`` on the chosen side of ``wu`` (vectorized)."""
    dq = np.asarray(dq, float)
    edge = 1.0 if upper else 0.0
    top = kl_binary(edge, wu)
    a = np.full(dq.shape, wu)
    b = np.full(dq.shape, edge)
    for _ in range(60):
        m = 0.5 * (a + b)
        f = kl_binary_np(m, wu) - dq
        go_out = f < 0
        a = np.where(go_out, m, a)
        b = np.where(go_out, b, m)
    out = 0.5 * (a + b)
    out = np.where(np.isclose(dq, top, rtol=0, atol=1e-15), edge, out)
    return np.where(dq <= top, out, np.nan)


def _tu_on_balance_scalar(dq, wu, upper):
    """Scalar twin of :func:`_tu_on_balance` using Brent's method."""
    edge = 1.0 if upper else 0.0
    top = kl_binary(edge, wu)
    if dq > top + 1e-15:
        return math.nan
    if abs(dq - top) <= 1e-15:
        return edge
    if dq <= 0.0:
        return wu
    return optimize.brentq(lambda t: kl_binary(t, wu) - dq, *sorted((wu, edge)),
                           xtol=1e-15, rtol=1e-15)


def balanced_point(params, samples=129):
    """The trade-off point with ``rho_q = rho_u``, minimizing the common value.

    ``rho_q = rho_u`` holds exactly when ``d(tq||wq) = d(tu||wu)``, so the
    search runs along that curve, one branch per side of each density.
    """
    best = (math.inf, None)
    branches = []
    for up_q in (True, False):
        edge = 1.0 if up_q else 0.0
        tq = np.linspace(params.wq, edge, samples)[1:]
        dq = kl_binary_np(tq, params.wq)
        for up_u in (True, False):
            tu = _tu_on_balance(dq, params.wu, up_u)
            ok = ~np.isnan(tu)
            if not np.any(ok):
                continue
            rq, _ = rho_grid(params, tq[ok], tu[ok])
            rq = np.where(np.isnan(rq), np.inf, rq)
            i = int(np.argmin(rq))
            branches.append((float(rq[i]), up_q, up_u, tq[ok], i))
    branches.sort(key=lambda r: r[0])
    for val, up_q, up_u, tqs, i in branches[:2]:
        if not math.isfinite(val):
            continue
        if val < best[0]:
            best = (val, (float(tqs[i]), None, up_u))
        lo = tqs[max(i - 1, 0)]
        hi = tqs[min(i + 1, len(tqs) - 1)]

        def f(t, up_u=up_u):
            tu = _tu_on_balance_scalar(kl_binary(t, params.wq), params.wu, up_u)
            if math.isnan(tu):
                return math.inf
            try:
                return rho_pair(params, Thresholds(t, float(tu))).rho_q
            except (ConfigurationError, ValueError):
                return math.inf

        if hi != lo:
            a, b = min(lo, hi), max(lo, hi)
            res = optimize.minimize_scalar(
                f, bounds=(a, b), method="bounded", options={"xatol": 1e-12}
            )
            if res.fun < best[0]:
                best = (float(res.fun), (float(res.x), None, up_u))
    if best[1] is None:
        raise ConfigurationError("no balanced threshold pair found")
    tq, _, up_u = best[1]
    tu = float(_tu_on_balance_scalar(kl_binary(tq, params.wq), params.wu, up_u))
    return _point(params, tq, tu)


def best_linear_combination(params, alpha, grid=64, starts=5):
    """Upper-bound point minimizing ``alpha rho_q + (1 - alpha) rho_u``."""

    def obj(q, u):
        rq, ru = rho_grid(params, q, u)
        return alpha * rq + (1.0 - alpha) * ru

    tq, tu, _ = _minimize_2d(obj, _standard_candidates(params), grid=grid, starts=starts)
    return _point(params, tq, tu)


# ---------------------------------------------------------------------------
# closed forms


def balanced_closed_form(w, w1, w2):
    """Balanced exponent of the symmetric problem at thresholds ``1 - w``."""
    if not (0.0 < w2 < w1 <= w < 1.0):
        raise ValueError("need 0 < w2 < w1 <= w < 1")
    num = math.log((w1 / w) * (1 - w) / (1 - 2 * w + w1))
    den = math.log((w2 / w) * (1 - w) / (1 - 2 * w + w2))
    return num / den


def _snap_unit(v, tol=1e-12):
    if v <= tol:
        return 0.0
    if v >= 1.0 - tol:
        return 1.0
    return v


def subset_closed_form(params, alpha):
    """Closed-form trade-off for subset and superset queries.

    Requires ``w1 = min(wq, wu)`` and ``w2 = wq wu``. The interpolation
    parameter ``alpha`` ranges over ``[w1 - wq wu, max(wq, wu) - wq wu]``.
    At the two ends of that range the thresholds reach a corner of the unit
    square where the closed forms are ``0/0``; there the general pipeline
    supplies the exponents.
    """
    wq, wu, w1, w2 = params.as_tuple()
    if wq == wu:
        raise ValueError("degenerate: the closed form divides by wq - wu")
    if abs(w1 - min(wq, wu)) > 1e-15 or abs(w2 - wq * wu) > 1e-15:
        raise ValueError("subset instance needs w1 = min(wq, wu) and w2 = wq wu")
    lo, hi = w1 - wq * wu, max(wq, wu) - wq * wu
    if not (lo - 1e-15 <= alpha <= hi + 1e-15):
        raise ValueError(f"alpha={alpha} outside [{lo}, {hi}]")
    diff = wq - wu
    tq = (wq * (1 - wu) - alpha) / diff
    tu = wu * (1 - wu) * wq * (1 - wq) / (diff * alpha) - wu * (1 - wq) / diff
    tq, tu = (_snap_unit(v) for v in (tq, tu))
    thr = Thresholds(tq, tu)
    du = kl_binary(tu, wu)
    interior = 1e-12 < tq < 1 - 1e-12 and 1e-12 < tu < 1 - 1e-12 and du > 0
    if not interior:
        return TradeoffPoint(thr, rho_pair(params, thr))
    lq, lu = math.log(tq / wq), math.log(tu / wu)
    mq, mu = math.log((1 - tq) / (1 - wq)), math.log((1 - tu) / (1 - wu))
    if w1 == wu:
        rq = (tq * mu - tu * mq) / du
        ru = ((1 - tu) * lq - (1 - tq) * lu) / du
    else:
        rq = (-(1 - tu) * lq + (1 - tq) * lu) / du
        ru = (-tq * mu + tu * mq) / du
    return TradeoffPoint(thr, ExponentPair(rq, ru))


def _endpoint_curve(params, side):
    """Threshold map along which ``rho_q`` (query) or ``rho_u`` (update) is 0."""
    wq, wu, w1, _ = params.as_tuple()
    if side == "query":
        return lambda t: t * w1 / wq + (1 - t) * (wu - w1) / (1 - wq), (wq, wu)
    if side == "update":
        return lambda t: t * w1 / wu + (1 - t) * (wq - w1) / (1 - wu), (wu, wq)
    raise ValueError("side must be 'query' or 'update'")


def endpoint_thresholds(params, side):
    """Thresholds at one end of the trade-off.

    Proportional cells ``t1/w1 = (tq - t1)/(wq - w1)`` make
    ``D(T1||P1) = d(tq||wq)``, hence ``rho_q = 0``, for every ``tq`` on a
    line through ``(wq, wu)``. Of those, the point with the least
    ``rho_u`` is returned. ``side="update"`` is the mirror image.
    """
    if params.w1 <= params.wq * params.wu + 1e-15:
        raise InfeasibleError("endpoints need w1 > wq wu")
    other, (w_own, _) = _endpoint_curve(params, side)
    own_q = side == "query"

    def thr_of(t):
        o = other(t)
        return (t, o) if own_q else (o, t)

    def score(t):
        o = other(t)
        if not (0.0 <= o <= 1.0):
            return math.inf
        try:
            e = rho_pair(params, Thresholds(*thr_of(t)))
        except (ConfigurationError, ValueError):
            return math.inf
        return e.rho_u if own_q else e.rho_q

    best_t, best_v = None, math.inf
    for lo, hi in ((w_own, 1.0), (0.0, w_own)):
        ts = np.linspace(lo, hi, 97)[1:-1]
        ts = np.concatenate([ts, [hi if hi != w_own else lo]])
        vals = np.array([score(float(t)) for t in ts])
        i = int(np.argmin(vals))
        if not math.isfinite(vals[i]):
            continue
        a = ts[max(i - 1, 0)]
        b = ts[min(i + 1, len(ts) - 2)] if i < len(ts) - 1 else ts[i]
        cand_t, cand_v = float(ts[i]), float(vals[i])
        if a != b:
            res = optimize.minimize_scalar(
                score, bounds=(min(a, b), max(a, b)), method="bounded",
                options={"xatol": 1e-12},
            )
            if res.fun < cand_v:
                cand_t, cand_v = float(res.x), float(res.fun)
        if cand_v < best_v:
            best_t, best_v = cand_t, cand_v
    if best_t is None:
        raise InfeasibleError(f"no {side} endpoint inside the unit square")
    return Thresholds(*thr_of(best_t))


def lower_bound_symmetric(w, w1, w2):
    """Lower bound for balanced data-independent filters with ``wq = wu``."""
    if not (0.0 < w2 < w1 <= w < 1.0):
        raise ValueError("need 0 < w2 < w1 <= w < 1")
    v = w * (1 - w)
    if abs(w2 - w * w) <= 1e-15:
        return 0.0
    if w2 < w * w:
        raise ValueError("need w2 > w^2")
    return math.log((w1 - w * w) / v) / math.log((w2 - w * w) / v)


def lower_bound_random(params, alpha, grid=64, starts=5):
    """List-of-points lower bound on ``alpha rho_q + (1 - alpha) rho_u``.

    Evaluates the infimum over thresholds of
    ``alpha (D - dq)/du + (1 - alpha)(D - du)/du`` with ``D = D(T||P1)``.

    Returns
    -------
    (value, Thresholds)
    """
    if abs(params.w2 - params.wq * params.wu) > 1e-12:
        raise ValueError("the bound applies to w2 = wq wu only")
    if not (0.0 <= alpha <= 1.0):
        raise ValueError("alpha must lie in [0, 1]")
    wq, wu, w1, _ = params.as_tuple()

    def obj(q, u):
        q = np.asarray(q, float)
        u = np.asarray(u, float)
        shape = q.shape
        D = _joint_min_np(q, u, np.full(shape, w1), np.full(shape, wq), np.full(shape, wu))
        dq = kl_binary_np(q, wq)
        du = kl_binary_np(u, wu)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = (alpha * (D - dq) + (1 - alpha) * (D - du)) / du
        return np.where((du > 1e-12) & np.isfinite(D), v, np.inf)

    tq, tu, val = _minimize_2d(obj, _standard_candidates(params), grid=grid, starts=starts)
    return val, Thresholds(tq, tu)


# ---------------------------------------------------------------------------
# baselines


def spherical_embedding(params):
    """Cosine similarities of close and far pairs under the centred embedding."""
    wq, wu, w1, w2 = params.as_tuple()
    s = math.sqrt(wq * (1 - wq) * wu * (1 - wu))
    return EmbeddingResult((w1 - wq * wu) / s, (w2 - wq * wu) / s)


def _safe_log_ratio(num_arg, den_arg):
    if not (0.0 < num_arg < 1.0) or not (0.0 < den_arg < 1.0):
        return None
    return math.log(num_arg) / math.log(den_arg)


def _simhash(alpha, beta):
    if not (-1.0 <= alpha <= 1.0) or not (-1.0 < beta < 1.0):
        return None
    return _safe_log_ratio(1 - math.acos(alpha) / math.pi, 1 - math.acos(beta) / math.pi)


def _spherical(alpha, beta):
    if not (-1.0 < beta < 1.0) or not (-1.0 < alpha <= 1.0):
        return None
    return (1 - alpha) / (1 + alpha) * (1 + beta) / (1 - beta)


def minhash_rho(params):
    """Balanced MinHash exponent from the Jaccard similarities of close and far pairs."""
    wq, wu, w1, w2 = params.as_tuple()
    return _safe_log_ratio(w1 / (wq + wu - w1), w2 / (wq + wu - w2))


def chosen_path_rho(params):
    """Chosen Path exponent ``ln(w1 / m) / ln(w2 / m)`` with ``m = max(wq, wu)``."""
    wq, wu, w1, w2 = params.as_tuple()
    m = max(wq, wu)
    return _safe_log_ratio(w1 / m, w2 / m)


def baseline_rhos(params):
    """Balanced exponents of supermajorities and the classic baselines.

    Entries whose formula leaves its domain are ``None``.
    """
    wq, wu, w1, w2 = params.as_tuple()
    emb = spherical_embedding(params)
    try:
        sm = balanced_point(params).exponents.rho_q
    except ConfigurationError:
        sm = None
    return {
        "supermajority": sm,
        "minhash": minhash_rho(params),
        "chosen_path": chosen_path_rho(params),
        "simhash": _simhash(emb.alpha, emb.beta),
        "spherical_lsf": _spherical(emb.alpha, emb.beta),
        "bit_sampling": _safe_log_ratio(1 - wq - wu + 2 * w1, 1 - wq - wu + 2 * w2),
    }


def spherical_tradeoff(alpha, beta, lam):
    """Spherical LSF space/time trade-off at ``lam`` in ``[-1, 1]``.

    ``rho_u`` is ``rho_q`` with ``lam`` negated, so ``lam = 0`` is balanced.
    """
    if not (-1.0 < beta < alpha < 1.0):
        raise ValueError("need -1 < beta < alpha < 1")
    if not (-1.0 <= lam <= 1.0):
        raise ValueError("lam must lie in [-1, 1]")
    if lam != 0.0 and alpha <= 0.0:
        raise ValueError("fractional powers need alpha > 0")

    def side(l):
        a_l = alpha ** l if l != 0.0 else 1.0
        return (1 - alpha * a_l) ** 2 / (1 - alpha ** 2) * (1 - beta ** 2) / (1 - a_l * beta) ** 2

    return ExponentPair(side(lam), side(-lam))


def minhash_family_rho(params, i):
    """Exponent of the filter keeping MinHash bucket ``i`` (``i`` may be inf).

    The filter is symmetrized, so the normalizer is the larger of the two
    single-side acceptance probabilities.
    """
    wq, wu, w1, w2 = params.as_tuple()
    if i < 0:
        raise ValueError("bucket index must be non-negative")
    lc = 1 - wq - wu
    if math.isinf(i):
        m = math.log(max(1 - wq, 1 - wu))
        num_arg, den_arg = lc + w1, lc + w2
        if num_arg <= 0 or den_arg <= 0:
            return math.inf
        den = math.log(den_arg) - m
        return (math.log(num_arg) - m) / den if den < 0 else math.inf
    m = max(i * math.log(1 - wq) + math.log(wq), i * math.log(1 - wu) + math.log(wu))

    def part(w):
        base = lc + w
        if base <= 0:
            return -math.inf if i > 0 else math.log(w) - m
        return i * math.log(base) + math.log(w) - m

    num, den = part(w1), part(w2)
    if not den < 0:
        return math.inf
    if num == -math.inf:
        return math.inf
    return num / den


def _balanced_bucket(params):
    """Bucket index where the two single-side acceptance terms coincide."""
    wq, wu = params.wq, params.wu
    if wq == wu:
        return None
    return math.log(wu / wq) / math.log((1 - wq) / (1 - wu))


def minhash_dominating(params):
    """Best of the bucket filters at ``i`` in ``{0, inf, balanced}``.

    Returns
    -------
    (best_i, rho)
    """
    cands = [0.0, math.inf]
    ib = _balanced_bucket(params)
    if ib is not None and ib > 0 and math.isfinite(ib):
        cands.append(ib)
    vals = [minhash_family_rho(params, i) for i in cands]
    j = int(np.argmin(vals))
    return cands[j], vals[j]


# ---------------------------------------------------------------------------
# embedding and threshold identity checks


def _embed_cos(w, wq, wu, a, b):
    num = w + wq * b + wu * a + a * b
    den = np.sqrt((wq * (1 + a) ** 2 + (1 - wq) * a ** 2) * (wu * (1 + b) ** 2 + (1 - wu) * b ** 2))
    return num / den


def embedding_rho(params, a, b, kind="sp"):
    """Exponent of spherical (``sp``) or hyperplane (``hp``) LSH after shifts.

    Sets are embedded as ``x + a`` and ``y + b`` before normalization.
    """
    wq, wu, w1, w2 = params.as_tuple()
    al = np.clip(_embed_cos(w1, wq, wu, a, b), -1.0, 1.0)
    be = np.clip(_embed_cos(w2, wq, wu, a, b), -1.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind == "sp":
            f = lambda z: (1 - z) / (1 + z)  # noqa: E731
            return f(al) / f(be)
        if kind == "hp":
            g = lambda z: np.log(1 - np.arccos(z) / np.pi)  # noqa: E731
            return g(al) / g(be)
    raise ValueError("kind must be 'sp' or 'hp'")


def embedding_grid_check(params, grid_resolution=0.02, kind="sp"):
    """Grid minimizer of the embedded exponent over shifts in ``[-1, 0.5]^2``."""
    ax = np.arange(-1.0, 0.5 + grid_resolution / 2, grid_resolution)
    A, B = np.meshgrid(ax, ax, indexing="ij")
    r = embedding_rho(params, A, B, kind)
    r = np.where(np.isfinite(r), r, np.inf)
    i, j = np.unravel_index(int(np.argmin(r)), r.shape)
    return float(A[i, j]), float(B[i, j])


def optimal_threshold_identity_check(w, w1):
    """Residual of the optimal-threshold identity for ``(w, w, w1, w^2)``.

    With ``rho = (w1 - w^2)/(w(1 - w))`` and ``tau = (1 - w)/w`` the identity
    reads ``tau^{-1}(rho + tau)/(rho + tau^{-1}) = w(1 - 2w + w1)/(w1(1 - w))``.
    The exponent ``r = 2 log tau / log((rho + tau)/(rho + 1/tau))`` then
    satisfies ``2/r - 1 = `` the balanced exponent at ``w2 = w^2``.

    Returns
    -------
    (residual, r)
        The residual is the larger of the relative identity error and, when
        ``w1 > w^2``, the gap between ``2/r - 1`` and the balanced exponent.
    """
    if not (0.0 < w < 1.0) or not (w * w - 1e-15 <= w1 <= w):
        raise ValueError("need 0 < w < 1 and w^2 <= w1 <= w")
    if w == 0.5:
        raise ValueError("tau = 1 makes r undefined")
    rho = (w1 - w * w) / (w * (1 - w))
    tau = (1 - w) / w
    lhs = (rho + tau) / (rho + 1 / tau) / tau
    rhs = w * (1 - 2 * w + w1) / (w1 * (1 - w))
    res = abs(lhs - rhs) / max(1.0, abs(rhs))
    ratio = (rho + tau) / (rho + 1 / tau)
    r = 2 * math.log(tau) / math.log(ratio) if ratio != 1.0 else math.inf
    if w1 > w * w and w1 < w and r != math.inf:
        gap = abs((2 / r - 1) - balanced_closed_form(w, w1, w * w))
        res = max(res, gap)
    return res, r

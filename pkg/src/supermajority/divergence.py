"""Binary and 2x2 Kullback-Leibler divergences and the inner-cell optimizer.

All divergences are in nats. Cells with zero mass contribute nothing
(``0 log 0 = 0``) and a target cell with mass where the reference has none
yields ``math.inf``, which callers treat as "no feasible configuration"
rather than as an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "INF",
    "GapParams",
    "Thresholds",
    "JointDistribution",
    "InfeasibleError",
    "kl_binary",
    "kl_binary_np",
    "kl_joint",
    "joint_from_marginals",
    "ambient",
    "optimize_inner",
    "optimize_inner_np",
    "joint_divergence_np",
]

INF = math.inf
_ATOL = 1e-12


class InfeasibleError(ValueError):
    """No target distribution with the requested marginals is admissible."""


@dataclass(frozen=True)
class GapParams:
    """Densities of a gapped set similarity search problem.

    Parameters
    ----------
    wq, wu : float
        Query and data set densities relative to the universe.
    w1, w2 : float
        Intersection densities of close and far pairs.
    """

    wq: float
    wu: float
    w1: float
    w2: float

    def __post_init__(self):
        wq, wu, w1, w2 = self.wq, self.wu, self.w1, self.w2
        if not (0.0 < w2 < w1 <= min(wq, wu) < 1.0):
            raise ValueError(
                f"need 0 < w2 < w1 <= min(wq, wu) < 1, got {self.as_tuple()}"
            )
        if 1.0 - wq - wu + w2 < -_ATOL:
            raise ValueError(
                "far pairs cannot exist: 1 - wq - wu + w2 is negative "
                f"for {self.as_tuple()}"
            )

    def as_tuple(self):
        return (self.wq, self.wu, self.w1, self.w2)

    @property
    def is_random_instance(self):
        """True when far pairs look like independent samples."""
        return abs(self.w2 - self.wq * self.wu) <= 1e-15

    @property
    def is_symmetric(self):
        return self.wq == self.wu

    def plannable(self):
        """Whether the index planner's extra condition ``w1 >= wq wu`` holds."""
        return self.w1 >= self.wq * self.wu - 1e-15

    @classmethod
    def parse(cls, text):
        parts = [float(v) for v in str(text).split(",")]
        if len(parts) != 4:
            raise ValueError("params must be four comma separated numbers")
        return cls(*parts)


@dataclass(frozen=True)
class Thresholds:
    """Supermajority thresholds for the query and the data side."""

    tq: float
    tu: float

    def __post_init__(self):
        for name in ("tq", "tu"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def as_tuple(self):
        return (self.tq, self.tu)

    def check_against(self, params):
        """Raise if a threshold coincides with its density."""
        if self.tq == params.wq or self.tu == params.wu:
            raise ValueError("thresholds must differ from the set densities")
        return self


@dataclass(frozen=True)
class JointDistribution:
    """A probability matrix ``[[m11, m12], [m21, m22]]`` over ``{0,1}^2``.

    Row one is the event "in the query side set", column one is
    "in the data side set".
    """

    m11: float
    m12: float
    m21: float
    m22: float

    def __post_init__(self):
        cells = self.cells()
        if min(cells) < -_ATOL:
            raise ValueError(f"negative cell in {cells}")
        if abs(sum(cells) - 1.0) > _ATOL:
            raise ValueError(f"cells sum to {sum(cells)!r}, not 1")

    def cells(self):
        return (self.m11, self.m12, self.m21, self.m22)

    @property
    def row_one(self):
        return self.m11 + self.m12

    @property
    def col_one(self):
        return self.m11 + self.m21

    def as_array(self):
        return np.array([[self.m11, self.m12], [self.m21, self.m22]])


def _clip(v):
    return 0.0 if abs(v) <= _ATOL and v < 0 else v


def joint_from_marginals(tq, tu, t1):
    """Build the matrix with first-row mass ``tq``, first-column mass ``tu``.

    Raises
    ------
    ValueError
        If ``t1`` lies outside the Frechet bounds.
    """
    lo = max(0.0, tq + tu - 1.0)
    hi = min(tq, tu)
    if t1 < lo - _ATOL or t1 > hi + _ATOL:
        raise ValueError(f"t1={t1} outside Frechet bounds [{lo}, {hi}]")
    return JointDistribution(
        _clip(t1), _clip(tq - t1), _clip(tu - t1), _clip(1.0 - tq - tu + t1)
    )


def ambient(params, far=False):
    """The ambient matrix of close (``w1``) or far (``w2``) pairs."""
    w = params.w2 if far else params.w1
    return joint_from_marginals(params.wq, params.wu, w)


def _xlogy_ratio(t, w):
    """``t log(t/w)`` with the zero conventions; ``inf`` if ``w = 0 < t``."""
    if t <= 0.0:
        return 0.0
    if w <= 0.0:
        return INF
    return t * math.log(t / w)


def kl_binary(t, w):
    """Binary divergence ``d(t || w)`` in nats.

    Examples
    --------
    >>> round(kl_binary(1.0, 0.25), 6)
    1.386294
    >>> kl_binary(0.2, 0.0)
    inf
    """
    if not (0.0 <= t <= 1.0) or not (0.0 <= w <= 1.0):
        raise ValueError(f"probabilities required, got t={t}, w={w}")
    return _xlogy_ratio(t, w) + _xlogy_ratio(1.0 - t, 1.0 - w)


def kl_binary_np(t, w):
    """Vectorized :func:`kl_binary` for arrays with ``0 < w < 1``."""
    t = np.asarray(t, dtype=float)
    w = np.asarray(w, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(t > 0, t * np.log(t / w), 0.0)
        b = np.where(t < 1, (1 - t) * np.log((1 - t) / (1 - w)), 0.0)
    return a + b


def kl_joint(T, P):
    """Divergence ``D(T || P)`` of two 2x2 distributions in nats."""
    total = 0.0
    for t, p in zip(T.cells(), P.cells()):
        total += _xlogy_ratio(t, p)
    return max(total, 0.0) if total != INF else INF


def _cells_of(params_like):
    if isinstance(params_like, JointDistribution):
        return params_like.cells()
    raise TypeError("expected a JointDistribution")


def _dlog(t1, tq, tu, p):
    """Derivative of ``t1 -> D(T(t1) || P)`` on the open interval."""
    return (
        math.log(t1 / p[0])
        - math.log((tq - t1) / p[1])
        - math.log((tu - t1) / p[2])
        + math.log((1.0 - tq - tu + t1) / p[3])
    )


def _feasible_interval(tq, tu, p):
    """Interval of ``t1`` compatible with the marginals and support of ``p``.

    Returns ``(lo, hi)`` or ``None`` when no admissible ``t1`` exists.
    """
    lo = max(0.0, tq + tu - 1.0)
    hi = min(tq, tu)
    # each zero cell of P pins the matching cell of T to zero
    pins = []
    if p[0] <= 0.0:
        pins.append(0.0)
    if p[1] <= 0.0:
        pins.append(tq)
    if p[2] <= 0.0:
        pins.append(tu)
    if p[3] <= 0.0:
        pins.append(tq + tu - 1.0)
    if pins:
        v = pins[0]
        if any(abs(x - v) > 1e-12 for x in pins[1:]):
            return None
        if v < lo - _ATOL or v > hi + _ATOL:
            return None
        v = min(max(v, lo), hi)
        return (v, v)
    if hi < lo - _ATOL:
        return None
    return (lo, max(lo, hi))


def optimize_inner(tq, tu, P):
    """Minimize ``t1 -> D(T(tq, tu, t1) || P)`` over the admissible interval.

    The objective is strictly convex on the open interval, so a Newton
    iteration safeguarded by a bisection bracket on the derivative sign
    converges to the unique minimizer.

    Parameters
    ----------
    tq, tu : float
        Marginals of the target matrix.
    P : JointDistribution
        Reference matrix.

    Returns
    -------
    float
        The minimizing ``t1``.

    Raises
    ------
    InfeasibleError
        If no target with these marginals is absolutely continuous with
        respect to ``P``.
    """
    p = _cells_of(P)
    iv = _feasible_interval(tq, tu, p)
    if iv is None:
        raise InfeasibleError(f"no admissible T for marginals ({tq}, {tu})")
    lo, hi = iv
    if hi - lo <= 1e-15:
        return lo
    # the derivative runs from -inf at lo to +inf at hi whenever the cell
    # that vanishes at an endpoint has positive reference mass
    a, b = lo, hi
    # start from the independent coupling, which is exact when P is a product
    x = tq * tu
    if not lo < x < hi:
        x = 0.5 * (lo + hi)
    for _ in range(200):
        g = _dlog(x, tq, tu, p)
        if g > 0:
            b = x
        else:
            a = x
        h = 1.0 / x + 1.0 / (tq - x) + 1.0 / (tu - x) + 1.0 / (1.0 - tq - tu + x)
        step = x - g / h
        if abs(step - x) <= 1e-15 * max(1.0, abs(x)):
            # converged; the step may round onto the bracket end just moved
            x = min(max(step, a), b)
            break
        x_new = step if a < step < b else 0.5 * (a + b)
        if abs(x_new - x) <= 1e-15 * max(1.0, abs(x)) or b - a <= 1e-16:
            x = x_new
            break
        x = x_new
    return min(max(x, lo), hi)


def optimize_inner_np(tq, tu, w1, wq, wu, iters=100):
    """Vectorized inner optimizer against ``P = [[w1, wq-w1], [wu-w1, .]]``.

    Runs the same safeguarded Newton iteration as :func:`optimize_inner`
    on all entries at once, starting from the independent coupling
    ``tq tu``. Infeasible entries, and entries whose reference matrix has a
    zero cell, are returned as ``nan``; callers fall back to
    :func:`optimize_inner` for those.
    """
    tq, tu, w1, wq, wu = np.broadcast_arrays(
        *(np.asarray(v, dtype=float) for v in (tq, tu, w1, wq, wu))
    )
    p = (w1, wq - w1, wu - w1, 1.0 - wq - wu + w1)
    lo = np.maximum(0.0, tq + tu - 1.0)
    hi = np.minimum(tq, tu)
    ok = (hi - lo > 1e-15) & (p[0] > 0) & (p[1] > 0) & (p[2] > 0) & (p[3] > 0)
    a = lo.copy()
    b = np.where(ok, hi, lo)
    x = tq * tu
    x = np.where((x > a) & (x < b), x, 0.5 * (a + b))
    todo = ok.copy()

    with np.errstate(divide="ignore", invalid="ignore"):
        for _ in range(iters):
            if not todo.any():
                break
            g = (np.log(x / p[0]) - np.log((tq - x) / p[1]) - np.log((tu - x) / p[2])
                 + np.log((1.0 - tq - tu + x) / p[3]))
            pos = g > 0
            b = np.where(todo & pos, x, b)
            a = np.where(todo & ~pos, x, a)
            h = 1.0 / x + 1.0 / (tq - x) + 1.0 / (tu - x) + 1.0 / (1.0 - tq - tu + x)
            step = x - g / h
            done = todo & (np.abs(step - x) <= 1e-15 * np.maximum(1.0, np.abs(x)))
            inside = (step > a) & (step < b)
            nx = np.where(inside, step, 0.5 * (a + b))
            nx = np.where(done, np.clip(step, a, b), nx)
            x = np.where(todo, nx, x)
            todo &= ~done & (b - a > 1e-16)
    feasible = hi >= lo - _ATOL
    degenerate = feasible & (hi - lo <= 1e-15)
    x = np.where(degenerate, np.minimum(lo, hi), x)
    has_zero = (p[0] <= 0) | (p[1] <= 0) | (p[2] <= 0) | (p[3] <= 0)
    return np.where(feasible & ~has_zero, x, np.nan)


def joint_divergence_np(tq, tu, t1, w1, wq, wu):
    """Vectorized ``D(T || P)`` for the matrices built from marginals."""
    t = (t1, tq - t1, tu - t1, 1.0 - tq - tu + t1)
    p = (w1, wq - w1, wu - w1, 1.0 - wq - wu + w1)
    out = 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        for ti, pi in zip(t, p):
            ti = np.maximum(ti, 0.0)
            term = np.where(ti > 0, ti * np.log(ti / pi), 0.0)
            out = out + term
    return np.maximum(out, 0.0)

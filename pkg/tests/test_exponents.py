import math

import numpy as np
import pytest

from supermajority.divergence import GapParams, InfeasibleError, Thresholds, kl_binary
from supermajority.exponents import (
    ConfigurationError,
    ExponentPair,
    balanced_closed_form,
    balanced_point,
    baseline_rhos,
    best_linear_combination,
    chosen_path_rho,
    divergence_terms,
    embedding_grid_check,
    embedding_rho,
    endpoint_thresholds,
    lower_bound_random,
    lower_bound_symmetric,
    minhash_dominating,
    minhash_family_rho,
    minhash_rho,
    optimal_threshold_identity_check,
    rho_grid,
    rho_pair,
    spherical_embedding,
    spherical_tradeoff,
    subset_closed_form,
    tradeoff_curve,
    tree_depth,
)

EX = GapParams(0.1, 0.1, 0.05, 0.01)
# by hand: ln(0.1/0.05) / ln(0.1/0.01)
LOG2_OVER_LOG10 = math.log(2) / math.log(10)
# closed form at w = 0.1, w1 = 0.05, w2 = 0.01
ANCHOR = math.log(0.5 * 0.9 / 0.85) / math.log(0.1 * 0.9 / 0.81)


def random_symmetric(rng):
    while True:
        w = rng.uniform(0.02, 0.45)
        w1 = rng.uniform(0.0, w)
        w2 = rng.uniform(0.0, w1)
        if w2 > 1e-4 and w1 - w2 > 1e-4:
            return w, w1, w2


def random_instance(rng):
    while True:
        wq, wu = rng.uniform(0.03, 0.6, 2)
        lo, hi = wq * wu, min(wq, wu)
        w1 = rng.uniform(lo, hi)
        if w1 - lo > 1e-3 * hi:
            try:
                return GapParams(wq, wu, w1, wq * wu)
            except ValueError:
                continue


class TestRhoPair:
    def test_chosen_path_corner(self):
        e = rho_pair(EX, Thresholds(1.0, 1.0))
        assert e.rho_q == pytest.approx(LOG2_OVER_LOG10, rel=1e-13)
        assert e.rho_u == pytest.approx(LOG2_OVER_LOG10, rel=1e-13)

    def test_anchor(self):
        e = rho_pair(EX, Thresholds(0.9, 0.9))
        assert e.rho_q == pytest.approx(ANCHOR, rel=1e-11)
        assert e.rho_q == pytest.approx(0.289451, abs=1e-6)

    def test_no_gap(self):
        with pytest.raises(ConfigurationError):
            rho_pair(EX, Thresholds(0.1, 0.1))

    def test_closed_form_matches(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            w, w1, w2 = random_symmetric(rng)
            p = GapParams(w, w, w1, w2)
            e = rho_pair(p, Thresholds(1 - w, 1 - w))
            assert e.rho_q == pytest.approx(balanced_closed_form(w, w1, w2), abs=1e-9)

    def test_grid_matches_scalar(self):
        p = GapParams(0.3, 0.2, 0.12, 0.07)
        rng = np.random.default_rng(1)
        tq, tu = rng.uniform(0.01, 0.99, (2, 200))
        rq, ru = rho_grid(p, tq, tu)
        for a, b, x, y in zip(tq, tu, rq, ru):
            try:
                e = rho_pair(p, Thresholds(a, b))
            except ConfigurationError:
                assert np.isnan(x)
                continue
            assert x == pytest.approx(e.rho_q, rel=1e-9, abs=1e-9)
            assert y == pytest.approx(e.rho_u, rel=1e-9, abs=1e-9)

    def test_independence_split(self):
        p = GapParams(0.3, 0.2, 0.1, 0.06)
        for tq in np.linspace(0.01, 0.99, 15):
            for tu in np.linspace(0.01, 0.99, 15):
                _, d2, dq, du = divergence_terms(p, Thresholds(tq, tu))
                assert abs(d2 - dq - du) <= 1e-10

    def test_combo(self):
        assert ExponentPair(0.2, 0.6).combo(0.25) == pytest.approx(0.5)


class TestDepth:
    def test_example(self):
        assert tree_depth(2 ** 20, EX, Thresholds(0.9, 0.9)) == 8

    def test_even_and_sufficient(self):
        thr = Thresholds(0.9, 0.9)
        _, d2, dq, _ = divergence_terms(EX, thr)
        for n in (10, 1000, 10 ** 6, 10 ** 9):
            k = tree_depth(n, EX, thr)
            assert k % 2 == 0
            assert k >= math.log(n) / (d2 - dq) - 1e-9
            assert k - 2 < math.log(n) / (d2 - dq) or k == 2

    def test_small_n(self):
        with pytest.raises(ValueError):
            tree_depth(1, EX, Thresholds(0.9, 0.9))


class TestBalanced:
    def test_anchor(self):
        b = balanced_point(EX)
        assert b.exponents.rho_q == pytest.approx(ANCHOR, abs=1e-9)
        assert b.thresholds.tq == pytest.approx(0.9, abs=1e-6)
        assert b.thresholds.tu == pytest.approx(0.9, abs=1e-6)

    def test_equal_exponents(self):
        p = GapParams(0.3, 0.2, 0.1, 0.06)
        b = balanced_point(p)
        assert b.exponents.rho_q == pytest.approx(b.exponents.rho_u, abs=1e-9)
        assert kl_binary(b.thresholds.tq, p.wq) == pytest.approx(
            kl_binary(b.thresholds.tu, p.wu), abs=1e-12)

    def test_is_minimal_along_balance(self):
        p = GapParams(0.3, 0.2, 0.1, 0.06)
        b = balanced_point(p).exponents.rho_q
        rq, ru = rho_grid(p, *np.meshgrid(np.linspace(0.01, 0.99, 199),
                                          np.linspace(0.01, 0.99, 199)))
        close = np.abs(rq - ru) < 2e-3
        assert np.nanmin(np.where(close, np.maximum(rq, ru), np.inf)) >= b - 2e-3


class TestTradeoff:
    def test_budgets_respected_and_monotone(self):
        budgets = [0.05, 0.1, 0.2, 0.3, 0.5]
        pts = tradeoff_curve(EX, budgets)
        prev = math.inf
        for b, pt in zip(budgets, pts):
            assert pt.exponents.rho_u <= b + 1e-9
            assert pt.exponents.rho_q <= prev + 1e-12
            prev = pt.exponents.rho_q

    def test_balanced_budget(self):
        pt = tradeoff_curve(EX, [ANCHOR])[0]
        assert pt.exponents.rho_q == pytest.approx(ANCHOR, abs=1e-4)

    def test_endpoints(self):
        tq = endpoint_thresholds(EX, "query")
        tu = endpoint_thresholds(EX, "update")
        assert rho_pair(EX, tq).rho_q == pytest.approx(0.0, abs=1e-12)
        assert rho_pair(EX, tu).rho_u == pytest.approx(0.0, abs=1e-12)
        # mirror images for a symmetric instance
        assert tq.tq == pytest.approx(tu.tu, abs=1e-7)
        assert tq.tu == pytest.approx(tu.tq, abs=1e-7)

    def test_endpoint_reference(self):
        t = endpoint_thresholds(EX, "update")
        assert t.tq == pytest.approx(0.33707, abs=1e-4)
        assert t.tu == pytest.approx(0.63342, abs=1e-4)

    def test_endpoint_needs_correlation(self):
        with pytest.raises(InfeasibleError):
            endpoint_thresholds(GapParams(0.2, 0.2, 0.04, 0.01), "query")

    def test_unknown_side(self):
        with pytest.raises(ValueError):
            endpoint_thresholds(EX, "both")


class TestSubsetClosedForm:
    def test_interior_matches_pipeline(self):
        for wq, wu in ((0.3, 0.1), (0.1, 0.3), (0.4, 0.25)):
            p = GapParams(wq, wu, min(wq, wu), wq * wu)
            lo, hi = p.w1 - wq * wu, max(wq, wu) - wq * wu
            for a in np.linspace(lo, hi, 9)[1:-1]:
                pt = subset_closed_form(p, a)
                ref = rho_pair(p, pt.thresholds)
                assert pt.exponents.rho_q == pytest.approx(ref.rho_q, abs=1e-8)
                assert pt.exponents.rho_u == pytest.approx(ref.rho_u, abs=1e-8)

    def test_ends_are_corners(self):
        p = GapParams(0.3, 0.1, 0.1, 0.03)
        lo, hi = p.w1 - 0.03, 0.3 - 0.03
        assert subset_closed_form(p, lo).thresholds.as_tuple() == (1.0, 1.0)
        assert subset_closed_form(p, hi).thresholds.as_tuple() == (0.0, 0.0)

    def test_requires_subset_instance(self):
        with pytest.raises(ValueError):
            subset_closed_form(GapParams(0.3, 0.1, 0.05, 0.03), 0.1)
        with pytest.raises(ValueError):
            subset_closed_form(GapParams(0.2, 0.2, 0.2, 0.04), 0.1)


class TestLowerBounds:
    def test_symmetric_below_balanced(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            w, w1, w2 = random_symmetric(rng)
            if w2 <= w * w:
                continue
            lb = lower_bound_symmetric(w, w1, w2)
            assert lb <= balanced_closed_form(w, w1, w2) + 1e-12

    def test_symmetric_random_instance_is_vacuous(self):
        assert lower_bound_symmetric(0.1, 0.05, 0.01) == 0.0

    def test_random_matches_upper_bound(self):
        p = GapParams(0.2, 0.15, 0.08, 0.03)
        for a in (0.0, 0.5, 1.0):
            lb, _ = lower_bound_random(p, a)
            ub = best_linear_combination(p, a).exponents.combo(a)
            assert abs(lb - ub) <= 1e-3

    def test_random_requires_independent_far(self):
        with pytest.raises(ValueError):
            lower_bound_random(GapParams(0.2, 0.15, 0.08, 0.04), 0.5)


class TestBaselines:
    def test_reference_row(self):
        b = baseline_rhos(EX)
        assert b["supermajority"] == pytest.approx(ANCHOR, abs=1e-9)
        assert b["minhash"] == pytest.approx(math.log(0.05 / 0.15) / math.log(0.01 / 0.19), rel=1e-12)
        assert b["minhash"] == pytest.approx(0.373114, abs=1e-6)
        assert b["chosen_path"] == pytest.approx(LOG2_OVER_LOG10, rel=1e-12)
        assert b["simhash"] == pytest.approx(0.6290571, abs=1e-7)
        assert b["spherical_lsf"] == pytest.approx(5 / 13, rel=1e-12)

    def test_embedding(self):
        e = spherical_embedding(EX)
        assert e.alpha == pytest.approx(4 / 9)
        assert e.beta == pytest.approx(0.0, abs=1e-15)

    def test_single_formulas(self):
        assert minhash_rho(EX) == baseline_rhos(EX)["minhash"]
        assert chosen_path_rho(EX) == baseline_rhos(EX)["chosen_path"]

    def test_spherical_tradeoff_swap(self):
        a, b = 0.5, 0.1
        for lam in (-0.6, -0.2, 0.3, 0.9):
            assert spherical_tradeoff(a, b, lam).rho_u == pytest.approx(
                spherical_tradeoff(a, b, -lam).rho_q)
        mid = spherical_tradeoff(a, b, 0.0)
        assert mid.rho_q == pytest.approx((1 - a) / (1 + a) * (1 + b) / (1 - b))

    def test_spherical_tradeoff_domain(self):
        with pytest.raises(ValueError):
            spherical_tradeoff(0.1, 0.5, 0.0)


class TestMinhashFamily:
    def test_zero_bucket_is_chosen_path(self):
        assert minhash_family_rho(EX, 0) == pytest.approx(LOG2_OVER_LOG10, rel=1e-12)

    def test_examples(self):
        i, r = minhash_dominating(EX)
        assert i == 0.0 and r == pytest.approx(LOG2_OVER_LOG10, rel=1e-12)
        i, r = minhash_dominating(GapParams(0.4, 0.05, 0.04, 0.01))
        assert i == pytest.approx(math.log(0.05 / 0.4) / math.log(0.6 / 0.95), rel=1e-12)

    def test_dominates_minhash(self):
        rng = np.random.default_rng(3)
        seen = 0
        while seen < 300:
            wq, wu = rng.uniform(0.02, 0.7, 2)
            w1 = rng.uniform(0, min(wq, wu))
            w2 = rng.uniform(0, w1)
            try:
                p = GapParams(wq, wu, w1, w2)
            except ValueError:
                continue
            mh = minhash_rho(p)
            if mh is None:
                continue
            assert minhash_dominating(p)[1] <= mh + 1e-9
            seen += 1

    def test_negative_bucket(self):
        with pytest.raises(ValueError):
            minhash_family_rho(EX, -1)


class TestEmbeddingOptimality:
    @pytest.mark.parametrize("params", [(0.3, 0.2, 0.1, 0.06), (0.1, 0.1, 0.05, 0.01),
                                        (0.4, 0.3, 0.2, 0.12)])
    def test_grid_minimizer(self, params):
        p = GapParams(*params)
        a, b = embedding_grid_check(p)
        assert abs(a + p.wq) <= 0.02 + 1e-9
        assert abs(b + p.wu) <= 0.02 + 1e-9

    def test_shift_recovers_spherical(self):
        p = GapParams(0.3, 0.2, 0.1, 0.06)
        assert float(embedding_rho(p, -0.3, -0.2)) == pytest.approx(baseline_rhos(p)["spherical_lsf"])

    def test_kind(self):
        with pytest.raises(ValueError):
            embedding_rho(EX, 0.0, 0.0, kind="xx")


class TestThresholdIdentity:
    def test_residual(self):
        rng = np.random.default_rng(4)
        for _ in range(200):
            w = rng.uniform(0.02, 0.45)
            w1 = rng.uniform(w * w, w)
            res, r = optimal_threshold_identity_check(w, w1)
            assert res <= 1e-10

    def test_ties(self):
        with pytest.raises(ValueError):
            optimal_threshold_identity_check(0.5, 0.3)

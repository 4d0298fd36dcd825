"""Command-line interface: ``smj analyze | gen | bench | verify``.

Results go to standard output as CSV, diagnostics to standard error.
Exit status is 0 on success, 1 when a requested check fails, 2 on usage or
validation errors and 3 on unreadable or malformed files.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
import time
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from . import exponents as ex
from . import instance as inst_mod
from . import lsf_index as lsf
from . import oracle
from .divergence import GapParams, Thresholds

__all__ = ["main", "BenchRecord", "build_parser"]

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3

METHODS = ("supermajority", "tradeoff", "minhash", "minhash_dominating", "chosen_path",
           "simhash", "spherical_lsf", "bit_sampling", "lower_bound")


class UsageError(Exception):
    pass


def _params(text):
    try:
        return GapParams.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from None


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def _pair(text):
    v = _floats(text)
    if len(v) != 2:
        raise argparse.ArgumentTypeError("expected two comma separated numbers")
    return Thresholds(*v)


def _writer(out):
    return csv.writer(out, lineterminator="\n")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return v


# ---------------------------------------------------------------------------
# analyze


def cmd_analyze(args, out):
    p = args.params
    methods = args.method or list(METHODS)
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise UsageError(f"unknown method(s): {', '.join(bad)}")
    w = _writer(out)
    w.writerow(["method", "t_q", "t_u", "rho_q", "rho_u"])
    base = None

    def baselines():
        nonlocal base
        if base is None:
            base = ex.baseline_rhos(p)
        return base

    if "supermajority" in methods:
        try:
            b = ex.balanced_point(p)
            w.writerow(["supermajority_balanced", _fmt(b.thresholds.tq), _fmt(b.thresholds.tu),
                        _fmt(b.exponents.rho_q), _fmt(b.exponents.rho_u)])
        except ex.ConfigurationError as e:
            print(f"warning: no balanced point: {e}", file=sys.stderr)
    if "tradeoff" in methods and args.budget:
        for budget, pt in zip(args.budget, _tradeoff(p, args.budget)):
            if pt is None:
                continue
            w.writerow([f"supermajority_budget_{budget:g}", _fmt(pt.thresholds.tq),
                        _fmt(pt.thresholds.tu), _fmt(pt.exponents.rho_q),
                        _fmt(pt.exponents.rho_u)])
    for name in ("minhash", "chosen_path", "simhash", "spherical_lsf", "bit_sampling"):
        if name in methods:
            v = baselines()[name]
            if v is not None:
                w.writerow([name, "", "", _fmt(v), _fmt(v)])
    if "minhash_dominating" in methods:
        i, v = ex.minhash_dominating(p)
        if math.isfinite(v):
            w.writerow([f"minhash_dominating_i{i:g}", "", "", _fmt(v), _fmt(v)])
    if "lower_bound" in methods:
        if p.is_symmetric and p.w2 > p.wq * p.wu - 1e-15:
            v = ex.lower_bound_symmetric(p.wq, p.w1, p.w2)
            w.writerow(["lower_bound_symmetric", "", "", _fmt(v), _fmt(v)])
        if p.is_random_instance:
            for a in args.alpha:
                v, thr = ex.lower_bound_random(p, a)
                w.writerow([f"lower_bound_random_alpha_{a:g}", _fmt(thr.tq), _fmt(thr.tu),
                            _fmt(v), ""])
    return EXIT_OK


def _tradeoff(p, budgets):
    pts = [None] * len(budgets)
    rest = []
    for j, b in enumerate(budgets):
        if b <= 0.0:
            try:
                thr = ex.endpoint_thresholds(p, "update")
                pts[j] = ex.TradeoffPoint(thr, ex.rho_pair(p, thr))
            except (ValueError, ex.ConfigurationError) as e:
                print(f"warning: no linear-space endpoint: {e}", file=sys.stderr)
        else:
            rest.append(j)
    if rest:
        for j, pt in zip(rest, ex.tradeoff_curve(p, [budgets[j] for j in rest])):
            pts[j] = pt
    return pts


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args, out):
    try:
        inst = inst_mod.generate(args.n, args.d, args.params, args.queries, seed=args.seed,
                                 strict=not args.allow_low_overlap,
                                 n_distractors=args.distractors)
    except ValueError as e:
        raise UsageError(str(e)) from None
    try:
        inst_mod.write_instance(inst, args.out)
        if args.text:
            inst_mod.write_text(inst.dataset, args.text)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    w = _writer(out)
    w.writerow(["path", "n", "d", "q", "queries", "planted", "sha256"])
    w.writerow([args.out, inst.n, inst.d, inst.q, inst.n_queries, len(inst.planted),
                inst.fingerprint()])
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


@dataclass
class BenchRecord:
    """One benchmark row."""

    n: int
    d: int
    wq: float
    wu: float
    w1: float
    w2: float
    tq: float
    tu: float
    K: int
    R: int
    recall: float
    mean_candidates: float
    mean_verified: float
    mean_paths: float
    distractor_matches: int
    build_seconds: float
    mean_query_seconds: float
    index_bytes: int
    backend: str


def run_bench(inst, thresholds=None, reps=None, seed=0, backend=None, mode="best"):
    """Plan, build and query an instance; returns a :class:`BenchRecord`."""
    from ._backend import get_backend

    p = inst.params
    cfg = lsf.plan(p, thresholds, n=inst.n, d=inst.d, reps=reps, seed=seed, backend=backend)
    idx = lsf.build(cfg, inst.dataset, backend=backend)
    reports = lsf.query_batch(idx, inst.queries, mode=mode, backend=backend)
    planted = dict(inst.planted)
    hits = [reports[j].matched == i for j, i in planted.items()]
    extra = [r for j, r in enumerate(reports) if j not in planted]
    return BenchRecord(
        n=inst.n, d=inst.d, wq=p.wq, wu=p.wu, w1=p.w1, w2=p.w2,
        tq=cfg.thresholds.tq, tu=cfg.thresholds.tu, K=cfg.K, R=cfg.reps,
        recall=float(np.mean(hits)) if hits else float("nan"),
        mean_candidates=float(np.mean([r.candidates for r in reports])) if reports else 0.0,
        mean_verified=float(np.mean([r.verified for r in reports])) if reports else 0.0,
        mean_paths=float(np.mean([r.paths for r in reports])) if reports else 0.0,
        distractor_matches=sum(r.matched is not None for r in extra),
        build_seconds=idx.build_seconds,
        mean_query_seconds=float(np.mean([r.seconds for r in reports])) if reports else 0.0,
        index_bytes=idx.nbytes, backend=get_backend(backend).BACKEND,
    )


def cmd_bench(args, out):
    try:
        inst = inst_mod.read_instance(args.input)
    except (OSError, inst_mod.MalformedFileError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    reps_list = args.reps or [None]
    rows = []
    for reps in reps_list:
        try:
            rec = run_bench(inst, args.thresholds, reps=reps, seed=args.seed,
                            backend=args.backend, mode=args.mode)
        except ex.ConfigurationError as e:
            raise UsageError(str(e)) from None
        rows.append(rec)
    w = _writer(out)
    fields = list(asdict(rows[0]).keys())
    w.writerow(fields)
    for r in rows:
        w.writerow([_fmt(v) for v in asdict(r).values()])
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify

LEMMAS = ("quadrant", "point-mass", "rearrangement", "moments")


def _laws():
    F = Fraction
    return [WL(*t) for t in [
        (F(3, 8), F(1, 2), F(1, 2)), (F(1, 4), F(1, 2), F(1, 2)), (F(1, 2), F(1, 2), F(1, 2)),
        (F(1, 8), F(1, 4), F(1, 4)), (F(3, 16), F(1, 4), F(3, 4)), (F(1, 4), F(1, 4), F(3, 4)),
        (F(9, 16), F(3, 4), F(3, 4)), (F(5, 8), F(3, 4), F(3, 4)), (F(3, 8), F(1, 2), F(3, 4)),
        (F(1, 4), F(1, 4), F(1, 2)),
    ]]


WL = oracle.WalkLaw


def _law_text(law):
    return f"p={law.p};p1={law.p1};p2={law.p2}"


def verify_rows(lemma, kmax=16, trials=10**5, seed=0):
    """Yield ``(lemma, k, case, value, bound, margin, passed)`` rows."""
    if lemma == "quadrant":
        for k in range(4, kmax + 1, 4):
            for law in _laws():
                v = float(oracle.quadrant_exact(k, law))
                b = oracle.quadrant_bound(k)
                yield (lemma, k, _law_text(law), v, b, v / b, v >= b)
    elif lemma == "point-mass":
        for k in range(1, min(kmax, 20) + 1):
            for law in _laws():
                try:
                    v = float(oracle.point_mass_exact(k, law))
                except oracle.PreconditionError:
                    continue
                b = oracle.point_mass_bound(k)
                yield (lemma, k, _law_text(law), v, b, v / b, v >= b)
    elif lemma == "rearrangement":
        for k in range(1, min(kmax, 12) + 1):
            for law in _laws():
                try:
                    v = float(oracle.rearrangement_exact(k, law))
                except oracle.PreconditionError:
                    continue
                b = oracle.rearrangement_bound(k)
                yield (lemma, k, _law_text(law), v, b, v / b, v >= b)
    elif lemma == "moments":
        p = GapParams(0.1, 0.1, 0.05, 0.01)
        for K in (4, 6, 8):
            thr = lsf.snap_thresholds(p, Thresholds(0.9, 0.9), K)
            cfg = lsf.make_config(p, thr, K, 1009, d=1000)
            for rel in ("single-query", "single-update", "far"):
                e = oracle.mc_filter_moments(cfg, rel, trials=trials, seed=seed)
                yield (f"moments:{rel}", K, f"t=({thr.tq:.4g},{thr.tu:.4g})", e.mean,
                       e.bound, (e.bound - e.mean) / e.stderr if e.stderr else math.inf,
                       bool(e.passed))
    else:
        raise UsageError(f"unknown lemma {lemma!r}")


def cmd_verify(args, out):
    lemmas = list(LEMMAS) if args.lemma in (None, "all") else [args.lemma]
    w = _writer(out)
    w.writerow(["lemma", "k", "case", "value", "bound", "margin", "status"])
    ok = True
    for lm in lemmas:
        for row in verify_rows(lm, kmax=args.kmax, trials=args.trials, seed=args.seed):
            *head, passed = row
            ok &= bool(passed)
            w.writerow([_fmt(v) for v in head] + ["pass" if passed else "FAIL"])
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="smj", description="Supermajority set similarity search.")
    sub = ap.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="exponent tables for a parameter tuple")
    a.add_argument("--params", type=_params, required=True, help="wq,wu,w1,w2")
    a.add_argument("--budget", type=_floats, default=[],
                   help="comma separated rho_u budgets; 0 gives the linear-space endpoint")
    a.add_argument("--method", type=lambda s: s.split(","), default=None,
                   help=f"subset of {','.join(METHODS)}")
    a.add_argument("--alpha", type=_floats, default=[0.0, 0.25, 0.5, 0.75, 1.0])

    g = sub.add_parser("gen", help="write a planted instance")
    g.add_argument("--params", type=_params, required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--queries", type=int, default=200)
    g.add_argument("--distractors", type=int, default=0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--allow-low-overlap", action="store_true",
                   help="skip the w2 d >= 20 ln n precondition")
    g.add_argument("--out", required=True)
    g.add_argument("--text", default=None, help="also write the dataset as text")

    b = sub.add_parser("bench", help="plan, build and query an instance file")
    b.add_argument("--input", required=True)
    b.add_argument("--thresholds", type=_pair, default=None, help="tq,tu (default: balanced)")
    b.add_argument("--reps", type=lambda s: [int(v) for v in s.split(",")], default=None)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--mode", choices=("first", "best"), default="best")
    b.add_argument("--backend", choices=("compiled", "python"), default=None)

    v = sub.add_parser("verify", help="check the random-walk lemmas and filter moments")
    v.add_argument("--lemma", choices=LEMMAS + ("all",), default="all")
    v.add_argument("--kmax", type=int, default=16)
    v.add_argument("--trials", type=int, default=10**5)
    v.add_argument("--seed", type=int, default=0)
    return ap


def main(argv=None, out=None):
    out = sys.stdout if out is None else out
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0) if e.code in (0, None) else EXIT_USAGE
    cmd = {"analyze": cmd_analyze, "gen": cmd_gen, "bench": cmd_bench, "verify": cmd_verify}
    t0 = time.perf_counter()
    try:
        code = cmd[args.command](args, out)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    print(f"{args.command}: {time.perf_counter() - t0:.2f}s", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

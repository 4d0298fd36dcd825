"""Compare the compiled and the numpy decoder on the building blocks of an index.

Usage::

    python3 benchmarks/bench_decode.py [--n 1024] [--reps 8] [--repeat 3]

Prints one CSV row per (workload, backend) with the best wall time over
``--repeat`` runs, and checks that both backends produce identical output.
"""

from __future__ import annotations

import argparse
import csv
import sys
import time

import numpy as np

from supermajority import _backend
from supermajority.divergence import GapParams
from supermajority.instance import generate, to_csr
from supermajority.lsf_index import build, plan, query_batch


def best_of(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=1024)
    ap.add_argument("--reps", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    names = _backend.available_backends()
    if "compiled" not in names:
        print("warning: compiled extension not built; timing the numpy decoder only",
              file=sys.stderr)
    p = GapParams(0.1, 0.1, 0.05, 0.01)
    inst = generate(args.n, 1000, p, min(200, args.n), seed=args.seed, strict=False)
    cfg = plan(p, n=args.n, d=1000, reps=args.reps, seed=args.seed)
    indptr, indices = to_csr(inst.dataset)
    arrs = cfg.family_arrays(1, reps=[0])
    fam = np.zeros(inst.n, dtype=np.int64)
    sch = cfg.schedule("update")
    delta = np.asarray(cfg.delta_seq, dtype=np.int64)
    reach = np.asarray(sch.reach, dtype=np.int64)

    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["workload", "backend", "seconds", "per_item_us", "speedup"])
    results = {}
    for workload in ("decode", "build", "query"):
        times = {}
        for name in names:
            be = _backend.get_backend(name)
            if workload == "decode":
                fn = lambda: be.decode_csr(indptr, indices, cfg.q, *arrs, fam, delta,  # noqa: E731
                                           reach, sch.complement)
                items = inst.n
            elif workload == "build":
                fn = lambda: build(cfg, inst.dataset, backend=name, threads=1)  # noqa: E731
                items = inst.n * cfg.reps
            else:
                index = build(cfg, inst.dataset, backend=name, threads=1)
                fn = lambda: query_batch(index, inst.queries, backend=name)  # noqa: E731
                items = len(inst.queries)
            secs, out = best_of(fn, args.repeat)
            times[name] = secs
            results[(workload, name)] = out
        base = times.get("python")
        for name, secs in times.items():
            w.writerow([workload, name, f"{secs:.4f}", f"{1e6 * secs / items:.1f}",
                        f"{base / secs:.2f}" if base else ""])

    if "compiled" in names:
        a, b = results[("decode", "compiled")], results[("decode", "python")]
        assert all(np.array_equal(u, v) for u, v in zip(a, b)), "decoders disagree"
        assert results[("build", "compiled")].fingerprint() == \
            results[("build", "python")].fingerprint(), "indexes differ"
        print("outputs identical across backends", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())

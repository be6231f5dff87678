"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 3] [--json out.json]

Each kernel runs on identical inputs in both backends; the table reports the
best wall time of ``--repeat`` runs and the speed-up of the compiled core.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

import numpy as np

from sectionflow.geometry import derive_scales
from sectionflow.hamiltonians import build_G, build_section3_H, level_params
from sectionflow.kernels import _pykernels

try:
    from sectionflow.kernels import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _cases(rng):
    p = derive_scales(4)
    sec3 = build_section3_H(p).params
    g2 = build_G(p, 2).params
    Z = np.ascontiguousarray(np.column_stack([
        rng.uniform(0, np.pi, 100_000), rng.uniform(0, 1, 100_000),
        rng.uniform(-1, 1, 100_000), rng.uniform(0, 1, 100_000),
    ]))
    Zi = np.ascontiguousarray(Z[:200])
    # G lives above y_check, in the first block's strip
    Zg = np.ascontiguousarray(np.column_stack([
        rng.uniform(0, p.eps, 500), rng.uniform(0, 1, 500), rng.uniform(0, p.eps, 500), rng.uniform(1, 3, 500),
    ]))
    Zl = np.ascontiguousarray(Z[:2000, :2] * [0.25, 1.0])
    T = np.ascontiguousarray(np.tile(np.linspace(0.01, 0.2, 8), (len(Zl), 1)))
    n = 1024
    px = np.ascontiguousarray(rng.uniform(8, n - 8, 200_000))
    py = np.ascontiguousarray(rng.uniform(8, n - 8, 200_000))
    occ = np.zeros((n, n), dtype=np.uint8)
    yy, xx = np.mgrid[0:n, 0:n]
    r = np.hypot(xx - n / 2, yy - n / 2)
    occ[(r > 300) & (r < 320)] = 1
    tol = (1e-10, 1e-10, np.inf, 1_000_000)
    # pointwise kernels must match to rounding; flows only to integration accuracy,
    # since rounding can flip a step acceptance on strongly sheared rows
    exact, flow = 1e-10, 1e-3
    return [
        ("field sec3 (1e5 pts)", exact, lambda m: m.field(sec3, Z)),
        ("jacobian_field G (1e5 pts)", exact, lambda m: m.jacobian_field(g2, Z)),
        ("integrate sec3 (200 pts)", flow, lambda m: m.integrate(sec3, Zi, 0.0, 1.0, *tol)[0]),
        ("integrate G (500 pts)", flow, lambda m: m.integrate(g2, Zg, 0.0, 1.0, *tol)[0]),
        ("integrate_times level (2000 pts)", flow,
         lambda m: m.integrate_times(level_params(p), Zl, T, 0.0, *tol)[0]),
        ("stamp_points (2e5 pts, 1024^2)", exact, lambda m: m.stamp_points(px, py, n, n, 0.75)[0]),
        ("hull_cells ring (1024^2)", exact, lambda m: np.array(m.hull_cells(occ))),
    ]


def _best(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3, help="runs per kernel; the best is kept")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", default=None, help="also write the results to this file")
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not available; build it with pip install -e .", file=sys.stderr)
        return 1
    rng = np.random.default_rng(args.seed)
    rows = []
    print(f"{'kernel':36s} {'cython s':>10s} {'numpy s':>10s} {'speed-up':>9s}  max dev")
    for name, limit, fn in _cases(rng):
        tc, oc = _best(lambda: fn(_ckernels), args.repeat)
        tp, op = _best(lambda: fn(_pykernels), max(1, args.repeat // 2))
        oc, op = np.asarray(oc, float), np.asarray(op, float)
        dev = float(np.max(np.abs(oc - op))) if oc.size else 0.0
        rows.append({"kernel": name, "cython_s": tc, "numpy_s": tp, "speedup": tp / tc,
                     "max_deviation": dev, "limit": limit, "agree": dev <= limit})
        print(f"{name:36s} {tc:10.4f} {tp:10.4f} {tp / tc:8.1f}x  {dev:.1e} (<= {limit:.0e})")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)
    return 0 if all(r["agree"] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())

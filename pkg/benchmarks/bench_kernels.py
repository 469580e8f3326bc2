"""Time the compiled and numpy integration kernels on the same problems.

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import random
import time
from fractions import Fraction

import numpy as np

from flowexp._kernels import COMPILED
from flowexp.fields import linear_field
from flowexp.fixtures import load_fields
from flowexp.flows import OdeProblem, solve_reference
from flowexp.signals import ControlTuple, random_piecewise_linear


def problems():
    rng = random.Random(7)
    f0, f1 = (load_fields("normal-form-3d")[i] for i in (0, 1))
    u = random_piecewise_linear(rng, pieces=6)
    yield "normal-form-3d, 6 pieces", OdeProblem(f0, ((u, f1),), [2, 1, -1], 1.0, 1e-12)
    op = load_fields("optimal-pair")
    v = random_piecewise_linear(rng, pieces=4)
    yield "optimal-pair", OdeProblem(op[0], ((v, op[1]),), [0.2, -0.1], 0.5, 1e-12)
    A = np.random.default_rng(1).normal(size=(6, 6)) / 3
    g = linear_field([[Fraction(x) for x in row] for row in A])
    yield "linear 6x6", OdeProblem(g, (), np.ones(6), 2.0, 1e-12)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        res = fn()
        times.append(time.perf_counter() - t0)
    return min(times), res


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = ["python"] + (["cython"] if COMPILED else [])
    if not COMPILED:
        print("compiled kernel not built; timing the numpy kernel only")
    print(f"{'problem':28s} {'backend':8s} {'steps':>6s} {'best [ms]':>10s} {'speedup':>8s} {'max diff':>9s}")
    for name, prob in problems():
        base = None
        for b in backends:
            dt, res = best_of(lambda: solve_reference(prob, backend=b), args.repeat)
            if base is None:
                base, ref = dt, res.endpoint
            diff = float(np.max(np.abs(res.endpoint - ref)))
            print(f"{name:28s} {b:8s} {res.steps:6d} {1e3 * dt:10.2f} {base / dt:8.1f} {diff:9.1e}")


if __name__ == "__main__":
    main()

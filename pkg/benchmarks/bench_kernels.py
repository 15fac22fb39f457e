"""Time the compiled kernels against the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel is called on a fixed, seeded workload typical of the solvers
(1001-node grids, small vertex clouds).  Prints the best-of-``repeat``
wall time per backend and the speedup.
"""
import argparse
import timeit

import numpy as np

from opincl import _kernels_py

try:
    from opincl import _kernels as compiled
except ImportError:  # extension not built
    compiled = None


def workloads(rng):
    pts = np.ascontiguousarray(rng.standard_normal((16, 2)))
    queries = np.ascontiguousarray(3 * rng.standard_normal((1001, 2)))
    clouds = np.ascontiguousarray(rng.standard_normal((1001, 8, 2)))
    lip = float(np.linalg.norm(pts - pts.mean(axis=0), 2) ** 2)
    tol = 1e-12 * float(np.abs(queries).max()) ** 2
    m = np.ascontiguousarray(np.cumsum(rng.random(1001)) * 1e-3)
    rho = np.ascontiguousarray(rng.standard_normal(1001))
    return {
        "nearest_point (1001 x 16)": lambda k: k.nearest_point(pts, queries),
        "nearest_per_node (1001 x 8)": lambda k: k.nearest_per_node(clouds, queries),
        "directed_excess (1001 vs 16)": lambda k: k.directed_excess(queries, pts),
        "hull_project (1001 onto 16-gon)": lambda k: k.hull_project(pts, queries, lip, tol, 5000),
        "volterra_exp_integral (1001)": lambda k: k.volterra_exp_integral(m, rho, 1e-3),
    }


def best_time(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.05:
        number *= 2
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':36s} {'numpy [ms]':>12s} {'compiled [ms]':>14s} {'speedup':>8s}")
    for name, call in workloads(rng).items():
        t_py = best_time(lambda: call(_kernels_py), args.repeat)
        if compiled is None:
            print(f"{name:36s} {1e3 * t_py:12.3f} {'n/a':>14s} {'n/a':>8s}")
            continue
        t_c = best_time(lambda: call(compiled), args.repeat)
        print(f"{name:36s} {1e3 * t_py:12.3f} {1e3 * t_c:14.3f} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()

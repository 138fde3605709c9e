#!/usr/bin/env python3
"""Benchmark: compiled pairwise-distance core vs the pure-NumPy fallback.

The dense anisotropic distance matrix is the hot loop of the whole pipeline
(O(n^2 m^2)); everything else is BLAS/LAPACK-bound. Run after building the
extension:

    python benchmarks/bench_pairwise.py [--sizes 500,1000,2000] [--dim 5]
"""

import argparse
import time

import numpy as np

from dmapalign._core import HAVE_COMPILED, pairwise_numpy

if HAVE_COMPILED:
    from dmapalign._core._pairwise import pairwise_quadratic_sq as compiled_impl
else:
    compiled_impl = None


def make_problem(n, m, seed=0):
    rng = np.random.default_rng(seed)
    points = rng.normal(size=(n, m))
    mats = rng.normal(size=(n, m, m))
    pinvs = np.ascontiguousarray(mats @ mats.transpose(0, 2, 1))
    return points, pinvs


def time_call(fn, *args, repeats=3):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="500,1000,2000")
    parser.add_argument("--dim", type=int, default=5)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    print(f"compiled core available: {HAVE_COMPILED}")
    print(f"{'n':>7} {'m':>3} {'numpy [s]':>10} {'compiled [s]':>13} {'speedup':>8}")
    for n in sizes:
        points, pinvs = make_problem(n, args.dim)
        t_numpy = time_call(pairwise_numpy.pairwise_quadratic_sq, points, pinvs, repeats=args.repeats)
        if compiled_impl is not None:
            t_compiled = time_call(compiled_impl, points, pinvs, repeats=args.repeats)
            ref = pairwise_numpy.pairwise_quadratic_sq(points, pinvs)
            got = compiled_impl(points, pinvs)
            assert np.allclose(ref, got, atol=1e-9), "implementations disagree"
            print(f"{n:>7} {args.dim:>3} {t_numpy:>10.3f} {t_compiled:>13.3f} {t_numpy / t_compiled:>7.1f}x")
        else:
            print(f"{n:>7} {args.dim:>3} {t_numpy:>10.3f} {'-':>13} {'-':>8}")


if __name__ == "__main__":
    main()

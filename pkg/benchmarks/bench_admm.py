"""Compare the compiled and NumPy ADMM kernels.

Runs the doubly l1-penalized inner solve on random problems of a few
sizes with a fixed iteration budget (tolerances set to zero so both
backends do identical work) and reports the median wall time per call.

    python benchmarks/bench_admm.py [--repeats 7] [--iters 200]
"""

import argparse
import statistics
import time

import numpy as np
from scipy import linalg

from jointard import _kernels

SIZES = [(50, 5), (200, 20), (500, 50), (2000, 50)]


def problem(n, d, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d)) / np.sqrt(n)
    y = X @ rng.standard_normal(d) + 0.1 * rng.standard_normal(n)
    inv_lam = np.ones(n)
    w = rng.uniform(0, 0.2, d)
    v = rng.uniform(0, 0.2, n)
    chol = linalg.cholesky(np.eye(d) + X.T @ X, lower=True)
    return X, y, inv_lam, w, v, chol


def time_kernel(fn, args, iters, repeats):
    X, y, inv_lam, w, v, chol = args
    n, d = X.shape
    times = []
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(X, y, inv_lam, w, v, 1.0, chol, np.zeros(d), np.zeros(n), np.zeros(d),
                 np.zeros(n), iters, 0.0, 0.0)
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=7)
    ap.add_argument("--iters", type=int, default=200)
    args = ap.parse_args(argv)
    if _kernels.BACKEND != "cython":
        print("compiled kernel unavailable; only the NumPy backend can be timed")
    print(f"{'n':>6} {'d':>4} {'numpy ms':>10} {'cython ms':>10} {'speedup':>8} {'max |diff|':>11}")
    for n, d in SIZES:
        args_ = problem(n, d)
        tp, op = time_kernel(_kernels.python_admm_double_l1, args_, args.iters, args.repeats)
        if _kernels.BACKEND == "cython":
            tc, oc = time_kernel(_kernels.admm_double_l1, args_, args.iters, args.repeats)
            diff = float(np.max(np.abs(op[0] - oc[0])))
            print(f"{n:>6} {d:>4} {tp * 1e3:>10.2f} {tc * 1e3:>10.2f} {tp / tc:>7.1f}x {diff:>11.1e}")
        else:
            print(f"{n:>6} {d:>4} {tp * 1e3:>10.2f} {'-':>10} {'-':>8} {'-':>11}")


if __name__ == "__main__":
    main()

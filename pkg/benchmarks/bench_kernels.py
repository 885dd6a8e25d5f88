"""Compiled vs pure-Python coordinate-descent kernels.

Runs both implementations on the same inputs, checks that they agree and
prints the wall time per call.

    python3 benchmarks/bench_kernels.py [--m 50] [--repeat 5]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from zazou import _kernels_py
from zazou.design import build_design
from zazou.tree import geometry, random_ultrametric_tree

try:
    from zazou import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None


def shooting_case(m, seed):
    rng = np.random.default_rng(seed)
    tree = random_ultrametric_tree(m, rng)
    geom = geometry(tree)
    z = rng.standard_normal(m)
    z[: m // 5] -= 3.0
    des = build_design(tree, geom, z, alpha=1.0)
    lam = 0.1 * float(np.abs(des.X.T @ des.y).max())
    return des.X, des.T, des.y, lam


def run_shooting(mod, X, T, y, lam, tol=1e-8, max_sweeps=10_000):
    n = X.shape[1]
    delta = np.zeros(n)
    resid = np.array(y, dtype=float)
    tdelta = np.zeros(X.shape[0])
    col_sq = np.einsum("ij,ij->j", X, X)
    order = np.arange(n, dtype=np.intp)
    sweeps, _, _ = mod.shooting_cd(X, T, lam, delta, resid, tdelta, col_sq, order, tol,
                                   max_sweeps, 1e-9)
    return delta, sweeps


def quadratic_case(m, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((2 * m, m))
    G = np.ascontiguousarray(X.T @ X / X.shape[0])
    c = np.zeros(m)
    c[0] = 1.0
    return G, c


def run_quadratic(mod, G, c, gamma=0.05, tol=1e-10, max_sweeps=10_000):
    beta = np.zeros(G.shape[0])
    grad = np.zeros_like(c)
    sweeps, _ = mod.l1_quadratic_cd(G, c, gamma, beta, grad, -1, tol, max_sweeps)
    return beta, sweeps


def timeit(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--m", type=int, default=50, help="number of leaves / columns")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _kernels_c is None:
        print("compiled kernels not built; only the pure-Python timings are shown")

    cases = [
        ("shooting_cd", shooting_case(args.m, args.seed), run_shooting),
        ("l1_quadratic_cd", quadratic_case(args.m, args.seed), run_quadratic),
    ]
    print(f"{'kernel':<18}{'python [ms]':>14}{'cython [ms]':>14}{'speedup':>10}{'max |diff|':>14}")
    for name, data, runner in cases:
        tp, (ref, sw) = timeit(lambda: runner(_kernels_py, *data), args.repeat)
        if _kernels_c is not None:
            tc, (got, sw_c) = timeit(lambda: runner(_kernels_c, *data), args.repeat)
            diff = float(np.abs(ref - got).max())
            print(f"{name:<18}{1e3 * tp:>14.3f}{1e3 * tc:>14.3f}{tp / tc:>10.1f}{diff:>14.2e}"
                  f"   ({sw} vs {sw_c} sweeps)")
        else:
            print(f"{name:<18}{1e3 * tp:>14.3f}{'-':>14}{'-':>10}{'-':>14}")


if __name__ == "__main__":
    main()

"""Time the numba kernels against their pure-numpy counterparts.

Run with ``python benchmarks/bench_kernels.py``.  Both variants are called
on identical inputs; the first numba call (compilation) is excluded.
"""
import argparse
import timeit

import numpy as np

from selinf_mle import kernels
from selinf_mle._accel import HAVE_NUMBA


def lasso_case(rng, n=200, p=50):
    X = rng.standard_normal((n, p))
    y = X[:, :5] @ np.ones(5) + rng.standard_normal(n)
    G = X.T @ X
    c = X.T @ y + rng.standard_normal(p) * np.sqrt(n)
    lam = 2.0 * np.sqrt(2 * n * np.log(p))
    return (G, c, lam, 1 / np.sqrt(n), np.zeros(p), 1e-12, 10_000)


def slope_case(rng, p=500):
    u = rng.standard_normal(p) * 3.0
    lam = np.sort(np.abs(rng.standard_normal(p)))[::-1] * 2.0
    return (u, lam)


def fd_case(rng, m=5000):
    return (rng.normal(1.0, 1.0, m), 0.0, np.sqrt(2.0), 1e-12, 100)


CASES = {
    "lasso_cd": (kernels.lasso_cd_nb, kernels.lasso_cd_np, lasso_case),
    "slope_prox": (kernels.slope_prox_nb, kernels.slope_prox_np, slope_case),
    "fd_mle": (kernels.fd_mle_nb, kernels.fd_mle_np, fd_case),
}


def bench(repeat, number, seed):
    rows = []
    for name, (nb, npf, make) in CASES.items():
        args = make(np.random.default_rng(seed))
        t_np = min(timeit.repeat(lambda: npf(*args), repeat=repeat, number=number)) / number
        t_nb = float("nan")
        if HAVE_NUMBA:
            nb(*args)  # compile outside the timed region
            t_nb = min(timeit.repeat(lambda: nb(*args), repeat=repeat, number=number)) / number
        rows.append((name, t_np, t_nb))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    print(f"{'kernel':<12}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name, t_np, t_nb in bench(a.repeat, a.number, a.seed):
        print(f"{name:<12}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()

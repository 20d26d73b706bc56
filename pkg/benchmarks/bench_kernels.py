"""Compare the compiled and numpy kernel backends on representative workloads.

    python benchmarks/bench_kernels.py [--repeat 3]

Workloads: predictive logistic-normal and Dirichlet densities on an R=200
grid against 2000 parameter draws, and a batch of 20000 SIR trajectories.
"""

import argparse
import time

import numpy as np
from scipy.special import gammaln

from metaunc import kernels
from metaunc.meta import LogisticNormalFamily
from metaunc.simplex import alr, barycentric_grid


def _workloads(rng):
    grid = barycentric_grid(200).points
    z, log_jac = alr(grid), np.log(grid).sum(axis=1)
    D = 2000
    mu = rng.normal(0, 0.5, (D, 2))
    L = np.zeros((D, 2, 2))
    L[:, 0, 0] = np.exp(rng.normal(-0.5, 0.1, D))
    L[:, 1, 1] = np.exp(rng.normal(-0.5, 0.1, D))
    L[:, 1, 0] = rng.normal(0, 0.1, D)
    params = np.concatenate([mu, L[:, [0, 1, 1], [0, 0, 1]]], axis=1)
    _, linv, logc = LogisticNormalFamily.kernel_args(params, 3)
    alpha = np.exp(rng.normal(1.0, 0.2, (D, 3)))
    dlogc = gammaln(alpha.sum(axis=1)) - gammaln(alpha).sum(axis=1)
    logw = np.full(D, -np.log(D))
    beta = rng.normal(2.0, 0.1, 20000)
    gamma = rng.normal(0.4, 0.1, 20000).clip(0.05)
    return {
        "logistic_normal_lse": lambda b: kernels.logistic_normal_lse(z, log_jac, mu, linv, logc, logw, backend=b),
        "dirichlet_lse": lambda b: kernels.dirichlet_lse(np.log(grid), alpha - 1, dlogc, logw, backend=b),
        "rk4_compartments": lambda b: kernels.rk4_compartments(beta, gamma, np.zeros_like(beta), False,
                                                               763.0, 1.0, 14, 20, backend=b),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    work = _workloads(np.random.default_rng(0))
    print(f"{'kernel':<22}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}  max|diff|")
    for name, fn in work.items():
        times, outs = {}, {}
        for b in backends:
            best = np.inf
            for _ in range(args.repeat):
                t0 = time.perf_counter()
                outs[b] = fn(b)
                best = min(best, time.perf_counter() - t0)
            times[b] = best
        speed = times["numpy"] / times["cython"] if "cython" in times else float("nan")
        diff = float(np.max(np.abs(outs["cython"] - outs["numpy"]))) if "cython" in outs else float("nan")
        print(f"{name:<22}" + "".join(f"{times[b]:>11.3f}s" for b in backends) + f"{speed:>9.1f}x  {diff:.1e}")


if __name__ == "__main__":
    main()

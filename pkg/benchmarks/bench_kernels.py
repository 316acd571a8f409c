"""Time the compiled dynamics kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat 200]
"""
import argparse
import timeit

import numpy as np

from windplan import _kernels_py, kernels
from windplan.params import PlannerParams


def cases(P, n):
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, (n, 9))
    U = np.column_stack([rng.uniform(-1, 1, (n, 3)), rng.uniform(0, 2 * P.m * P.g, n)])
    F = rng.uniform(-1, 1, (n, 3))
    return X, U, F


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    P = PlannerParams()
    if kernels.BACKEND == "python":
        print("compiled extension unavailable; only the numpy backend is timed")
    backends = {"numpy": _kernels_py}
    if kernels.BACKEND != "python":
        from windplan import _kernels
        backends["cython"] = _kernels
    print(f"{'kernel':<12}{'batch':>6}" + "".join(f"{name + ' us':>14}" for name in backends) + f"{'speedup':>10}")
    for n in (1, 20):
        X, U, F = cases(P, n)
        calls = {
            "deriv": lambda m: m.deriv(X, U, F, P.m, P.g, P.k_d),
            "jac": lambda m: m.jac(X, U, P.m, P.g, P.k_d),
            "rk4": lambda m: m.rk4(X, U, F, P.t_s, P.m, P.g, P.k_d),
            "rk4_sens": lambda m: m.rk4_sens(X, U, F, P.t_s, P.m, P.g, P.k_d),
        }
        for name, fn in calls.items():
            times = {}
            for bname, mod in backends.items():
                times[bname] = min(timeit.repeat(lambda: fn(mod), number=args.repeat, repeat=3)) / args.repeat * 1e6
            speed = times["numpy"] / times["cython"] if "cython" in times else float("nan")
            print(f"{name:<12}{n:>6}" + "".join(f"{t:>14.1f}" for t in times.values()) + f"{speed:>10.1f}")


if __name__ == "__main__":
    main()

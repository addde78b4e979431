"""Time the compiled loop kernels against their numpy counterparts.

    python benchmarks/bench_kernels.py [--repeat 3] [--json out.json]

Numba compilation happens once before timing starts.
"""

import argparse
import json
import time

import numpy as np

from imbalanced_ssl import _accel, kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cd_case(n, d, C, sweeps):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((n, d))
    y = rng.integers(0, C, size=n)
    sq = np.einsum("ij,ij->i", X, X)

    def run(fn):
        return lambda: fn(X, y, np.zeros((C, d)), np.zeros((n, C)), sq, sweeps, 0.0, 1e300)

    return run


def kde_case(n, m):
    F = np.random.default_rng(1).standard_normal((n, m))

    def run(fn):
        return lambda: fn(F, 0.5)

    return run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json")
    args = ap.parse_args()

    if not _accel.NUMBA_AVAILABLE:
        print("numba disabled or missing; only the numpy kernels will be timed")
    cases = [
        ("dual_cd n=2000 d=256 C=3 sweeps=5", cd_case(2000, 256, 3, 5), kernels._cd_sweeps_loop, kernels._cd_sweeps_numpy),
        ("kde n=2500 m=10", kde_case(2500, 10), kernels._kde_row_sums_loop, kernels._kde_row_sums_numpy),
    ]
    results = []
    for name, case, loop, vec in cases:
        row = {"case": name, "numpy_s": best_of(case(vec), args.repeat)}
        if _accel.NUMBA_AVAILABLE:
            case(loop)()  # compile
            row["numba_s"] = best_of(case(loop), args.repeat)
            row["speedup"] = row["numpy_s"] / row["numba_s"]
        results.append(row)
        extra = f"  numba {row['numba_s']:.4f}s  x{row['speedup']:.1f}" if "numba_s" in row else ""
        print(f"{name:40s} numpy {row['numpy_s']:.4f}s{extra}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()

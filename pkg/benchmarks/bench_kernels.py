"""Time the compiled kernels against their numpy fallbacks.

Run ``python benchmarks/bench_kernels.py``. Compilation happens once before
timing; each figure is the best of several repeats.
"""

import argparse
import timeit
from itertools import combinations

import numpy as np

from ivselect import _kernels
from ivselect._accel import HAVE_NUMBA
from ivselect.simulate import preset, run_study


def cases(rng):
    Pi = rng.uniform(1.5, 2.5, (21, 2))
    gamma = rng.standard_normal(21)
    subsets = np.array(list(combinations(range(21), 2)), dtype=np.int64)
    grid = rng.standard_normal((21, 21, 2))
    mask = ~np.eye(21, dtype=bool)
    X = rng.standard_normal((2000, 21))
    y = X[:, :9] @ rng.uniform(0.5, 1, 9) + rng.standard_normal(2000)
    G, c0 = X.T @ X, X.T @ y
    elig = np.ones(21, dtype=np.bool_)
    w = np.ones(21)
    yy = float(y @ y)
    return {
        "solve_subsets": lambda impl: impl(Pi, gamma, subsets, 1e-10),
        "masked_row_medians": lambda impl: impl(grid, mask),
        "lars_gram": lambda impl: impl(G, c0, elig, 19, 1e-12, 1e-12),
        "lasso_cd": lambda impl: impl(G, c0, yy, 50.0, w, 1e-10, 100_000),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    ap.add_argument("--study-reps", type=int, default=20, help="replications for the end-to-end timing")
    args = ap.parse_args()

    print(f"{'kernel':<22}{'numpy ms':>12}{'numba ms':>12}{'speed-up':>10}")
    for name, call in cases(np.random.default_rng(0)).items():
        row = []
        for backend in ("numpy", "numba"):
            impl = getattr(_kernels, f"{name}_{backend}")
            if backend == "numba" and not HAVE_NUMBA:
                row.append(float("nan"))
                continue
            call(impl)  # compile / warm up
            best = min(timeit.repeat(lambda: call(impl), repeat=args.repeat, number=args.number))
            row.append(1e3 * best / args.number)
        print(f"{name:<22}{row[0]:>12.3f}{row[1]:>12.3f}{row[0] / row[1]:>10.1f}")

    cfg = preset("table3", n=2000)
    run_study(cfg, 1)
    t = timeit.timeit(lambda: run_study(cfg, args.study_reps), number=1)
    print(f"\ntable3 study, n = 2000: {1e3 * t / args.study_reps:.1f} ms per replication (all estimators)")


if __name__ == "__main__":
    main()

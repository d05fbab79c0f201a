"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--n-svm 400]

Both backends are run on the same inputs and their outputs are checked for
equality before timings are reported.
"""

import argparse
import sys
import timeit

import numpy as np

from aedtrace import _kernels


def _svm_problem(n, seed):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(0.0, 1.0, (n // 2, 8)), rng.normal(0.8, 1.0, (n - n // 2, 8))])
    y = np.r_[-np.ones(n // 2), np.ones(n - n // 2)]
    sq = (X * X).sum(1)
    K = np.exp(-0.125 * np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0))
    return K, y


def cases(n_svm):
    K, y = _svm_problem(n_svm, seed=0)
    ranks25 = np.arange(2, 52, 2)  # doubled ranks 1..25
    ranks_ties = np.repeat(np.arange(3, 43, 4), 2)[:18]
    return {
        f"smo_solve n={n_svm}": lambda m: m.smo_solve(K, y, 1.0, 1e-3, 1_000_000),
        "signed_rank_counts n=25": lambda m: m.signed_rank_counts(ranks25),
        "rank_sum_counts 9+7": lambda m: m.rank_sum_counts(np.arange(2, 34, 2), 9),
        "rank_sum_counts 9+9 tied": lambda m: m.rank_sum_counts(ranks_ties, 9),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, z) for x, z in zip(a, b))
    return np.array_equal(a, b) if isinstance(a, np.ndarray) else a == b


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--n-svm", type=int, default=400)
    args = ap.parse_args(argv)

    if "cython" not in _kernels.available_backends():
        print("compiled backend not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    py, cy = _kernels.backend_module("python"), _kernels.backend_module("cython")

    print(f"{'kernel':<28}{'python ms':>12}{'cython ms':>12}{'speedup':>10}")
    for name, fn in cases(args.n_svm).items():
        if not _same(fn(py), fn(cy)):
            print(f"{name}: backends disagree", file=sys.stderr)
            return 1
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat))
        t_cy = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat))
        print(f"{name:<28}{1e3 * t_py:>12.2f}{1e3 * t_cy:>12.2f}{t_py / t_cy:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())

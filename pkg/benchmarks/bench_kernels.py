"""Compiled vs pure-Python Sturm kernels on Airy-operator batches.

    python3 benchmarks/bench_kernels.py [--batch 2000] [--repeat 3]

Prints the best-of-``repeat`` wall time per call and the speed-up for
each kernel at K = 100 and K = 1000.
"""
import argparse
import time

import numpy as np

from igmcmc import _kernels_py
from igmcmc.airy import AiryModel, _off2, sample_diagonals

try:
    from igmcmc import _kernels
except ImportError:
    _kernels = None


def best(fn, repeat):
    t = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        t.append(time.perf_counter() - t0)
    return min(t)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--batch", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled kernels not built; only the fallback is timed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'K':>6}{'batch':>8}{'python s':>12}{'cython s':>12}{'speed-up':>10}")
    for n_par in (1e3, 1e6):
        model = AiryModel.from_n(n_par)
        K = model.matrix_size
        B = args.batch if K <= 100 else max(args.batch // 10, 1)
        D = sample_diagonals(model, B, rng)
        off2 = _off2(model)
        cases = {
            "sturm_count": lambda mod: mod.sturm_count(D, off2, -2.0),
            "top_eigvals(3)": lambda mod: mod.top_eigvals(D[: max(B // 10, 1)], off2, 3),
            "count_in_window": lambda mod: mod.count_in_window(D, off2, -2.1, -1.9),
        }
        for name, call in cases.items():
            tp = best(lambda: call(_kernels_py), args.repeat)
            tc = best(lambda: call(_kernels), args.repeat) if _kernels is not None else float("nan")
            print(f"{name:<16}{K:>6}{B:>8}{tp:>12.4f}{tc:>12.4f}{tp / tc:>10.1f}")


if __name__ == "__main__":
    main()

"""Compare the compiled and pure-Python SVD kernels (and LAPACK for scale).

    python3 benchmarks/bench_svd.py [--sizes 10 30 50 100] [--repeat 5]

Also times singular value soft-thresholding on the same shapes, which is
the per-iteration cost of the nuclear-norm solver.
"""

import argparse
import timeit

import numpy as np
from threadpoolctl import threadpool_limits

from lowrank_ci import _kernels
from lowrank_ci.linalg import soft_threshold_sv, svd


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", type=int, nargs="+", default=[10, 30, 50, 100])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    backends = _kernels.available_backends()
    rng = np.random.default_rng(0)
    print(f"backends: {', '.join(backends)} (default {_kernels.BACKEND})")
    header = f"{'shape':>9} {'op':>5}" + "".join(f"{b:>14}" for b in backends) + f"{'lapack':>14}"
    if "compiled" in backends and "python" in backends:
        header += f"{'speedup':>10}"
    print(header)
    with threadpool_limits(1):
        for m in args.sizes:
            a = rng.standard_normal((m, m))
            tau = 0.5 * np.sqrt(m)
            number = max(1, 200 // m)
            for op in ("svd", "svt"):
                times = {}
                for b in backends:
                    if op == "svd":
                        times[b] = best_of(lambda: svd(a, backend=b), args.repeat, number)
                    else:
                        times[b] = best_of(lambda: soft_threshold_sv(a, tau, backend=b), args.repeat, number)
                lap = best_of(lambda: np.linalg.svd(a), args.repeat, number)
                row = f"{m:>4}x{m:<4} {op:>5}" + "".join(f"{times[b] * 1e3:>12.3f}ms" for b in backends)
                row += f"{lap * 1e3:>12.3f}ms"
                if "compiled" in times and "python" in times:
                    row += f"{times['python'] / times['compiled']:>9.1f}x"
                print(row)


if __name__ == "__main__":
    main()

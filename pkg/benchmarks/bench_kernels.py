"""Benchmark the compiled CSR kernels against the pure-numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""
import argparse
import time

import numpy as np

from graphmoe.kernels import _csr_py
from graphmoe.sparse import SparseMatrix

try:
    from graphmoe.kernels import _csr_c
except ImportError:
    _csr_c = None


def random_csr(n, density, seed):
    rng = np.random.default_rng(seed)
    nnz = int(n * n * density)
    rows = rng.integers(0, n, size=nnz)
    cols = rng.integers(0, n, size=nnz)
    return SparseMatrix.from_coo(n, n, rows, cols, rng.normal(size=nnz))


def bench(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=7)
    args = ap.parse_args()

    cases = [(1_000, 0.01, 32), (5_000, 0.002, 64), (20_000, 0.0005, 64)]
    impls = [("numpy", _csr_py)]
    if _csr_c is not None:
        impls.append(("compiled", _csr_c))
    else:
        print("compiled backend not built; benchmarking the fallback only")

    print(f"{'case':>22} {'kernel':>12} " +
          " ".join(f"{name:>10}" for name, _ in impls) +
          ("   speedup" if len(impls) == 2 else ""))
    for n, density, d in cases:
        s = random_csr(n, density, seed=0)
        dense = np.random.default_rng(1).normal(size=(n, d))
        label = f"n={n} nnz={s.nnz} d={d}"
        for kernel, call in [
            ("spmm", lambda impl: impl.spmm(s.row_ptr, s.col_idx, s.values,
                                            dense)),
            ("segment_sum", lambda impl: impl.segment_sum(s.values, s.row_ptr)),
            ("segment_max", lambda impl: impl.segment_max(s.values, s.row_ptr)),
        ]:
            times = [bench(lambda impl=impl: call(impl), args.repeats)
                     for _, impl in impls]
            row = f"{label:>22} {kernel:>12} " + \
                " ".join(f"{t * 1e3:9.3f}ms" for t in times)
            if len(times) == 2:
                row += f"   {times[0] / times[1]:6.2f}x"
            print(row)
            label = ""


if __name__ == "__main__":
    main()

"""Timing comparison: compiled kernels vs the pure-numpy fallback.

Runs each kernel on graph-shaped inputs at a few sizes and prints a
table of best-of-N wall times plus the speedup ratio. The two backends
are imported explicitly (the package-level selection is bypassed) so
one process can time both.

Usage:
    python3 benchmarks/bench_kernels.py [--repeat 5] [--sizes small,medium,large]
"""

import argparse
import time

import numpy as np

from l2ir.kernels import reference

try:
    from l2ir.kernels import _core as compiled
except ImportError:
    compiled = None

SIZES = {
    # n_rows, avg_nnz_per_row, dense_cols (spmm); n_sets, items (jaccard)
    "small": dict(n=500, deg=8, d=64, sets=300, items=400, set_len=12),
    "medium": dict(n=2000, deg=10, d=128, sets=1000, items=2000, set_len=20),
    "large": dict(n=8000, deg=12, d=256, sets=2500, items=8000, set_len=30),
}


def random_csr(rng, n_rows, n_cols, avg_nnz):
    counts = rng.poisson(avg_nnz, size=n_rows)
    indptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    indices = rng.integers(0, n_cols, size=int(indptr[-1]), dtype=np.int64)
    data = rng.normal(size=indices.shape[0])
    return indptr, indices, data


def random_sets_csr(rng, n_sets, n_items, avg_len):
    rows = [np.unique(rng.integers(0, n_items, size=max(1, rng.poisson(avg_len))))
            for _ in range(n_sets)]
    indptr = np.zeros(n_sets + 1, dtype=np.int64)
    np.cumsum([r.size for r in rows], out=indptr[1:])
    indices = (np.concatenate(rows).astype(np.int64)
               if rows else np.zeros(0, dtype=np.int64))
    return indptr, indices


def best_of(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, result


def bench_size(name, params, repeat):
    rng = np.random.default_rng(0)
    indptr, indices, data = random_csr(rng, params["n"], params["n"],
                                       params["deg"])
    dense = rng.normal(size=(params["n"], params["d"]))
    a = random_sets_csr(rng, params["sets"], params["items"],
                        params["set_len"])
    b = random_sets_csr(rng, params["sets"] // 2, params["items"],
                        params["set_len"])

    rows = []
    for kernel, args in (
        ("csr_spmm", (indptr, indices, data, dense)),
        ("pairwise_jaccard", (*a, *b)),
    ):
        t_ref, out_ref = best_of(getattr(reference, kernel), args, repeat)
        if compiled is not None:
            t_c, out_c = best_of(getattr(compiled, kernel), args, repeat)
            assert np.array_equal(out_ref, out_c), f"{kernel} outputs diverge"
            ratio = t_ref / t_c if t_c else float("inf")
            rows.append((name, kernel, t_c * 1e3, t_ref * 1e3, ratio))
        else:
            rows.append((name, kernel, float("nan"), t_ref * 1e3,
                         float("nan")))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5,
                        help="timing repetitions; best run is reported")
    parser.add_argument("--sizes", default="small,medium,large",
                        help="comma-separated subset of "
                             + ",".join(SIZES))
    args = parser.parse_args()

    if compiled is None:
        print("compiled extension not available; timing fallback only\n")
    header = (f"{'size':<8} {'kernel':<18} {'compiled ms':>12} "
              f"{'fallback ms':>12} {'speedup':>9}")
    print(header)
    print("-" * len(header))
    for size in args.sizes.split(","):
        for name, kernel, t_c, t_ref, ratio in bench_size(
                size, SIZES[size], args.repeat):
            c_txt = f"{t_c:12.3f}" if np.isfinite(t_c) else f"{'n/a':>12}"
            r_txt = f"{ratio:8.2f}x" if np.isfinite(ratio) else f"{'n/a':>9}"
            print(f"{name:<8} {kernel:<18} {c_txt} {t_ref:12.3f} {r_txt}")


if __name__ == "__main__":
    main()

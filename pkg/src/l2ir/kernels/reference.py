"""Pure-numpy fallback for the compiled kernels.

Same contracts as ``l2ir.kernels._core``; slower, used when the extension
was not built. Accumulation order matches the compiled code (CSR order),
so both backends produce identical floating-point results.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def csr_spmm(indptr: np.ndarray, indices: np.ndarray, data: np.ndarray,
             dense: np.ndarray) -> np.ndarray:
    """Sparse (CSR) x dense product: out[i] = sum_j data[ij] * dense[indices[ij]].

    indptr has length n_rows+1; dense is (n_cols, d) float64, C-contiguous.
    """
    n = indptr.shape[0] - 1
    out = np.zeros((n, dense.shape[1]), dtype=np.float64)
    if indices.shape[0] == 0:
        return out
    rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))
    np.add.at(out, rows, data[:, None] * dense[indices])
    return out


def pairwise_jaccard(a_indptr: np.ndarray, a_indices: np.ndarray,
                     b_indptr: np.ndarray, b_indices: np.ndarray) -> np.ndarray:
    """Jaccard index between every row-set of A and every row-set of B.

    Rows are strictly increasing integer arrays (CSR layout). An empty pair
    of rows scores 0. Implemented as a binary-indicator matrix product.
    """
    na = a_indptr.shape[0] - 1
    nb = b_indptr.shape[0] - 1
    out = np.zeros((na, nb), dtype=np.float64)
    if a_indices.shape[0] == 0 or b_indices.shape[0] == 0:
        return out
    n_items = int(max(a_indices.max(), b_indices.max())) + 1
    a_bin = np.zeros((na, n_items), dtype=np.float64)
    a_rows = np.repeat(np.arange(na, dtype=np.int64), np.diff(a_indptr))
    a_bin[a_rows, a_indices] = 1.0
    b_bin = np.zeros((nb, n_items), dtype=np.float64)
    b_rows = np.repeat(np.arange(nb, dtype=np.int64), np.diff(b_indptr))
    b_bin[b_rows, b_indices] = 1.0
    inter = a_bin @ b_bin.T
    sizes_a = np.diff(a_indptr).astype(np.float64)
    sizes_b = np.diff(b_indptr).astype(np.float64)
    union = sizes_a[:, None] + sizes_b[None, :] - inter
    np.divide(inter, union, out=out, where=union > 0)
    return out

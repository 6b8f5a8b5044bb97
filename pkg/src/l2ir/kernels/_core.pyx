# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: CSR SpMM (graph aggregation) and pairwise Jaccard."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def csr_spmm(cnp.int64_t[::1] indptr, cnp.int64_t[::1] indices,
             cnp.float64_t[::1] data, cnp.float64_t[:, ::1] dense):
    """Sparse (CSR) x dense product: out[i] = sum_j data[ij] * dense[indices[ij]]."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t d = dense.shape[1]
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] out = out_arr
    cdef Py_ssize_t i, jj, k
    cdef cnp.int64_t j
    cdef cnp.float64_t w
    for i in range(n):
        for jj in range(indptr[i], indptr[i + 1]):
            j = indices[jj]
            w = data[jj]
            for k in range(d):
                out[i, k] += w * dense[j, k]
    return out_arr


def pairwise_jaccard(cnp.int64_t[::1] a_indptr, cnp.int64_t[::1] a_indices,
                     cnp.int64_t[::1] b_indptr, cnp.int64_t[::1] b_indices):
    """Jaccard index between every row-set of A and every row-set of B.

    Rows are strictly increasing integer arrays (CSR layout). Intersection
    counts come from Gustavson-style accumulation over an item -> B-rows
    index, touching only (i, j) pairs that share an item; pairs sharing
    nothing keep the zero the output starts with. Intersections are exact
    integers here and in the indicator-product fallback, so both backends
    round the final division identically.
    """
    cdef Py_ssize_t na = a_indptr.shape[0] - 1
    cdef Py_ssize_t nb = b_indptr.shape[0] - 1
    out_arr = np.zeros((na, nb), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] out = out_arr
    if a_indices.shape[0] == 0 or b_indices.shape[0] == 0:
        return out_arr

    cdef Py_ssize_t n_items = 0
    cdef Py_ssize_t p
    for p in range(b_indices.shape[0]):
        if b_indices[p] >= n_items:
            n_items = b_indices[p] + 1

    # CSC of B: for every item, the B rows that contain it
    csc_indptr_arr = np.zeros(n_items + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] csc_indptr = csc_indptr_arr
    cdef Py_ssize_t j
    for p in range(b_indices.shape[0]):
        csc_indptr[b_indices[p] + 1] += 1
    for p in range(n_items):
        csc_indptr[p + 1] += csc_indptr[p]
    csc_rows_arr = np.empty(b_indices.shape[0], dtype=np.int64)
    cdef cnp.int64_t[::1] csc_rows = csc_rows_arr
    fill_arr = np.zeros(n_items, dtype=np.int64)
    cdef cnp.int64_t[::1] fill = fill_arr
    cdef cnp.int64_t t
    for j in range(nb):
        for p in range(b_indptr[j], b_indptr[j + 1]):
            t = b_indices[p]
            csc_rows[csc_indptr[t] + fill[t]] = j
            fill[t] += 1

    acc_arr = np.zeros(nb, dtype=np.int64)
    cdef cnp.int64_t[::1] acc = acc_arr
    stamp_arr = np.full(nb, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] stamp = stamp_arr
    touched_arr = np.empty(nb, dtype=np.int64)
    cdef cnp.int64_t[::1] touched = touched_arr

    cdef Py_ssize_t i, q, n_touched
    cdef cnp.int64_t inter, size_a, size_b
    cdef cnp.float64_t union_
    for i in range(na):
        size_a = a_indptr[i + 1] - a_indptr[i]
        n_touched = 0
        for p in range(a_indptr[i], a_indptr[i + 1]):
            t = a_indices[p]
            if t >= n_items:
                continue
            for q in range(csc_indptr[t], csc_indptr[t + 1]):
                j = csc_rows[q]
                if stamp[j] != i:
                    stamp[j] = i
                    acc[j] = 1
                    touched[n_touched] = j
                    n_touched += 1
                else:
                    acc[j] += 1
        for q in range(n_touched):
            j = touched[q]
            inter = acc[j]
            size_b = b_indptr[j + 1] - b_indptr[j]
            union_ = <cnp.float64_t> (size_a + size_b - inter)
            out[i, j] = inter / union_
    return out_arr

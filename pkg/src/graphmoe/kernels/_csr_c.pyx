# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled CSR kernels: sparse-times-dense product and segment reductions.

Same contracts as kernels._csr_py; straight loops, no threading, so results
are bitwise deterministic.
"""
import numpy as np

cimport numpy as cnp

cnp.import_array()


def spmm(cnp.int64_t[::1] row_ptr, cnp.int64_t[::1] col_idx,
         double[::1] values, double[:, ::1] dense):
    cdef Py_ssize_t n = row_ptr.shape[0] - 1
    cdef Py_ssize_t d = dense.shape[1]
    out_arr = np.zeros((n, d), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, e, k, j
    cdef double v
    for i in range(n):
        for e in range(row_ptr[i], row_ptr[i + 1]):
            j = col_idx[e]
            v = values[e]
            for k in range(d):
                out[i, k] += v * dense[j, k]
    return out_arr


def segment_sum(double[::1] data, cnp.int64_t[::1] row_ptr):
    cdef Py_ssize_t n = row_ptr.shape[0] - 1
    out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, e
    for i in range(n):
        for e in range(row_ptr[i], row_ptr[i + 1]):
            out[i] += data[e]
    return out_arr


def segment_max(double[::1] data, cnp.int64_t[::1] row_ptr, double fill=-np.inf):
    cdef Py_ssize_t n = row_ptr.shape[0] - 1
    out_arr = np.full(n, fill, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, e
    for i in range(n):
        for e in range(row_ptr[i], row_ptr[i + 1]):
            if data[e] > out[i]:
                out[i] = data[e]
    return out_arr

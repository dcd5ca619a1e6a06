"""Pure-numpy CSR kernels, used when the compiled extension is unavailable.

All three functions are bitwise deterministic for fixed inputs; the compiled
twin in ``_csr_c.pyx`` implements the same contracts with plain loops.
"""
from __future__ import annotations

import numpy as np


def spmm(row_ptr, col_idx, values, dense):
    """CSR times dense, (n x c) @ (c x d) -> (n x d)."""
    n = row_ptr.shape[0] - 1
    out = np.zeros((n, dense.shape[1]), dtype=np.float64)
    if col_idx.shape[0] == 0:
        return out
    prod = values[:, None] * dense[col_idx]
    starts = row_ptr[:-1]
    valid = row_ptr[1:] > starts
    # reduceat over only the non-empty rows: consecutive valid starts bound
    # exactly one row's entries, and the last segment runs to the end.
    out[valid] = np.add.reduceat(prod, starts[valid], axis=0)
    return out


def segment_sum(data, row_ptr):
    """Sum a 1-D edge array over CSR row segments; empty rows give 0."""
    n = row_ptr.shape[0] - 1
    out = np.zeros(n, dtype=np.float64)
    if data.shape[0] == 0:
        return out
    starts = row_ptr[:-1]
    valid = row_ptr[1:] > starts
    out[valid] = np.add.reduceat(data, starts[valid])
    return out


def segment_max(data, row_ptr, fill=-np.inf):
    """Max of a 1-D edge array over CSR row segments; empty rows give fill."""
    n = row_ptr.shape[0] - 1
    out = np.full(n, fill, dtype=np.float64)
    if data.shape[0] == 0:
        return out
    starts = row_ptr[:-1]
    valid = row_ptr[1:] > starts
    out[valid] = np.maximum.reduceat(data, starts[valid])
    return out

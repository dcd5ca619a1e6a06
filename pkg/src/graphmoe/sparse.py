"""CSR sparse matrices: the substrate of all graph propagation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import spmm as _spmm_kernel


class ShapeError(ValueError):
    pass


@dataclass
class SparseMatrix:
    rows: int
    cols: int
    row_ptr: np.ndarray  # int64, length rows+1
    col_idx: np.ndarray  # int64
    values: np.ndarray  # float64
    _transpose: "SparseMatrix | None" = field(default=None, repr=False, compare=False)

    @property
    def nnz(self) -> int:
        return int(self.col_idx.shape[0])

    def validate(self) -> None:
        if self.row_ptr.shape[0] != self.rows + 1:
            raise ShapeError("row_ptr length must be rows+1")
        if np.any(np.diff(self.row_ptr) < 0):
            raise ShapeError("row_ptr must be non-decreasing")
        if self.row_ptr[-1] != self.col_idx.shape[0]:
            raise ShapeError("row_ptr[-1] must equal nnz")
        if self.nnz and (self.col_idx.min() < 0 or self.col_idx.max() >= self.cols):
            raise ShapeError("col_idx out of range")
        for i in range(self.rows):
            seg = self.col_idx[self.row_ptr[i] : self.row_ptr[i + 1]]
            if np.any(np.diff(seg) <= 0):
                raise ShapeError(f"col_idx not strictly increasing in row {i}")

    @classmethod
    def from_coo(cls, rows, cols, r, c, v) -> "SparseMatrix":
        """Build from coordinate triples; duplicate entries are summed."""
        r = np.asarray(r, dtype=np.int64)
        c = np.asarray(c, dtype=np.int64)
        v = np.asarray(v, dtype=np.float64)
        order = np.lexsort((c, r))
        r, c, v = r[order], c[order], v[order]
        if r.shape[0]:
            keep = np.ones(r.shape[0], dtype=bool)
            keep[1:] = (r[1:] != r[:-1]) | (c[1:] != c[:-1])
            group = np.cumsum(keep) - 1
            vals = np.zeros(int(group[-1]) + 1, dtype=np.float64)
            np.add.at(vals, group, v)
            r, c, v = r[keep], c[keep], vals
        row_ptr = np.zeros(rows + 1, dtype=np.int64)
        np.add.at(row_ptr, r + 1, 1)
        row_ptr = np.cumsum(row_ptr)
        return cls(rows, cols, row_ptr.astype(np.int64), c, v)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        idx = np.arange(n, dtype=np.int64)
        return cls(n, n, np.arange(n + 1, dtype=np.int64), idx, np.ones(n))

    @classmethod
    def from_dense(cls, a: np.ndarray) -> "SparseMatrix":
        r, c = np.nonzero(a)
        return cls.from_coo(a.shape[0], a.shape[1], r, c, a[r, c])

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.rows, self.cols))
        for i in range(self.rows):
            sl = slice(self.row_ptr[i], self.row_ptr[i + 1])
            out[i, self.col_idx[sl]] = self.values[sl]
        return out

    def with_values(self, values: np.ndarray) -> "SparseMatrix":
        """Same sparsity pattern, different values."""
        return SparseMatrix(self.rows, self.cols, self.row_ptr, self.col_idx,
                            np.asarray(values, dtype=np.float64))

    def edge_rows(self) -> np.ndarray:
        """Row index of every stored entry, in storage order."""
        return np.repeat(np.arange(self.rows, dtype=np.int64), np.diff(self.row_ptr))

    def transpose(self) -> "SparseMatrix":
        if self._transpose is None:
            t = SparseMatrix.from_coo(self.cols, self.rows, self.col_idx,
                                      self.edge_rows(), self.values)
            self._transpose = t
        return self._transpose

    def matmul_dense(self, dense: np.ndarray) -> np.ndarray:
        if self.cols != dense.shape[0]:
            raise ShapeError(
                f"spmm shape mismatch: {self.rows}x{self.cols} @ {dense.shape}")
        return _spmm_kernel(self.row_ptr, self.col_idx, self.values,
                            np.ascontiguousarray(dense))

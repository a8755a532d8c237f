"""Compressed-sparse-row weight storage used by the sparse inference path."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeError


@dataclass(frozen=True)
class SparseMatrix:
    rows: int
    cols: int
    row_offsets: np.ndarray  # int64, length rows + 1
    col_indices: np.ndarray  # int64, strictly increasing within a row
    values: np.ndarray  # float64

    @property
    def nnz(self):
        return int(self.row_offsets[-1])

    @property
    def shape(self):
        return (self.rows, self.cols)

    def mask(self):
        """Boolean matrix marking the stored positions."""
        out = np.zeros((self.rows, self.cols), dtype=bool)
        row_ids = np.repeat(np.arange(self.rows), np.diff(self.row_offsets))
        out[row_ids, self.col_indices] = True
        return out

    def validate(self):
        ro = self.row_offsets
        if len(ro) != self.rows + 1 or ro[0] != 0 or np.any(np.diff(ro) < 0):
            raise ShapeError("row_offsets must be non-decreasing, start at 0, length rows+1")
        if len(self.col_indices) != self.nnz or len(self.values) != self.nnz:
            raise ShapeError("col_indices/values length must equal nnz")
        if self.nnz and (self.col_indices.min() < 0 or self.col_indices.max() >= self.cols):
            raise ShapeError("column index out of range")
        for r in range(self.rows):
            seg = self.col_indices[ro[r]:ro[r + 1]]
            if np.any(np.diff(seg) <= 0):
                raise ShapeError(f"column indices not strictly increasing in row {r}")


def sparsify(matrix, mask=None):
    """Store the entries of ``matrix`` selected by ``mask`` (default: nonzeros)."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {m.shape}")
    keep = m != 0 if mask is None else np.asarray(mask, dtype=bool).reshape(m.shape)
    rows, cols = np.nonzero(keep)  # row-major order, so columns ascend per row
    offsets = np.zeros(m.shape[0] + 1, dtype=np.int_)
    np.cumsum(np.bincount(rows, minlength=m.shape[0]), out=offsets[1:])
    return SparseMatrix(
        rows=m.shape[0],
        cols=m.shape[1],
        row_offsets=offsets,
        col_indices=cols.astype(np.int_),
        values=np.ascontiguousarray(m[rows, cols]),
    )


def densify(sp):
    out = np.zeros((sp.rows, sp.cols))
    row_ids = np.repeat(np.arange(sp.rows), np.diff(sp.row_offsets))
    out[row_ids, sp.col_indices] = sp.values
    return out


def sparse_apply(sp, x):
    """Matrix-vector product ``M @ x`` touching stored entries only."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != (sp.cols,):
        raise ShapeError(f"vector of length {x.shape} does not match {sp.shape}")
    return kernels.csr_matvec(sp.row_offsets, sp.col_indices, sp.values, x, sp.rows)


def dense_times_sparse(x, sp):
    """``X @ M`` for a dense (N, rows) block ``X``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != sp.rows:
        raise ShapeError(f"block {x.shape} does not match sparse {sp.shape}")
    return kernels.dense_csr_matmul(x, sp.row_offsets, sp.col_indices, sp.values, sp.cols)

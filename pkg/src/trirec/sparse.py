"""Canonical CSR sparse matrices and the linear-algebra kernels used elsewhere.

The model only ever needs five operations on its adjacency matrices:
sparse-times-dense, sparse-times-sparse, elementwise (Hadamard) product,
transpose, and symmetric degree normalization.  They are exposed here as
pure functions over an immutable :class:`SparseMatrix` value type.  The
heavy lifting is delegated to ``scipy.sparse``; this module owns the
canonical-form guarantees the rest of the code base relies on.

Canonical form means:

* ``row_offsets`` is non-decreasing, starts at 0 and ends at ``nnz``;
* column indices are strictly increasing within each row;
* no explicitly stored zero values;
* duplicate coordinates passed to a constructor are summed.

All values are float64.  Instances are immutable (the backing arrays are
marked read-only), so they can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class ShapeError(ValueError):
    """Operand dimensions do not line up."""


class DomainError(ValueError):
    """Operand values are outside an operation's domain."""


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Real sparse matrix in canonical CSR form."""

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        offsets = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        cols = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        _check_canonical(self.n_rows, self.n_cols, offsets, cols, vals)
        for arr in (offsets, cols, vals):
            arr.setflags(write=False)
        object.__setattr__(self, "row_offsets", offsets)
        object.__setattr__(self, "col_indices", cols)
        object.__setattr__(self, "values", vals)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    @classmethod
    def from_scipy(cls, mat: sp.spmatrix) -> "SparseMatrix":
        """Build from any scipy sparse matrix, canonicalizing on the way in."""
        csr = sp.csr_matrix(mat, dtype=np.float64, copy=True)
        csr.sum_duplicates()
        csr.sort_indices()
        csr.eliminate_zeros()
        return cls(
            n_rows=csr.shape[0],
            n_cols=csr.shape[1],
            row_offsets=csr.indptr.astype(np.int64),
            col_indices=csr.indices.astype(np.int64),
            values=csr.data.astype(np.float64),
        )

    @classmethod
    def from_coo(cls, rows, cols, values, shape: tuple[int, int]) -> "SparseMatrix":
        """Build from coordinate triplets; duplicate coordinates are summed."""
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if not (rows.shape == cols.shape == values.shape):
            raise ShapeError("rows, cols and values must have equal length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= shape[0]:
                raise ShapeError("row index out of range")
            if cols.min() < 0 or cols.max() >= shape[1]:
                raise ShapeError("column index out of range")
        coo = sp.coo_matrix((values, (rows, cols)), shape=shape)
        return cls.from_scipy(coo)

    @classmethod
    def from_dense(cls, dense) -> "SparseMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(dense, dtype=np.float64)))

    @classmethod
    def zeros(cls, shape: tuple[int, int]) -> "SparseMatrix":
        return cls.from_coo([], [], [], shape=shape)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        idx = np.arange(n)
        return cls.from_coo(idx, idx, np.ones(n), shape=(n, n))

    def to_scipy(self) -> sp.csr_matrix:
        """Zero-copy view as a scipy CSR matrix."""
        return sp.csr_matrix(
            (self.values, self.col_indices, self.row_offsets),
            shape=self.shape,
            copy=False,
        )

    def to_dense(self) -> np.ndarray:
        return self.to_scipy().toarray()

    def equals(self, other: "SparseMatrix") -> bool:
        """Exact structural and value equality (both are canonical)."""
        return (
            self.shape == other.shape
            and np.array_equal(self.row_offsets, other.row_offsets)
            and np.array_equal(self.col_indices, other.col_indices)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self) -> str:  # pragma: no cover
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"


def _check_canonical(n_rows, n_cols, offsets, cols, vals) -> None:
    if n_rows < 0 or n_cols < 0:
        raise ShapeError("matrix dimensions must be non-negative")
    if offsets.shape != (n_rows + 1,):
        raise ShapeError("row_offsets must have length n_rows + 1")
    if offsets[0] != 0 or offsets[-1] != vals.size or np.any(np.diff(offsets) < 0):
        raise ShapeError("row_offsets must be non-decreasing from 0 to nnz")
    if cols.shape != vals.shape:
        raise ShapeError("col_indices and values must have equal length")
    if vals.size:
        if cols.min() < 0 or cols.max() >= n_cols:
            raise ShapeError("column index out of range")
        if cols.size > 1:
            # adjacent entries must have increasing columns unless a row break
            # sits between them
            increasing = np.diff(cols) > 0
            row_break = np.zeros(cols.size - 1, dtype=bool)
            starts = offsets[1:-1]
            starts = starts[(starts > 0) & (starts < cols.size)]
            row_break[starts - 1] = True
            if not np.all(increasing | row_break):
                raise ShapeError("column indices must be strictly increasing per row")
        if np.any(vals == 0.0):
            raise DomainError("explicit zeros are not allowed in canonical form")
    if not np.all(np.isfinite(vals)):
        raise DomainError("values must be finite")


def spmm(matrix: SparseMatrix, dense) -> np.ndarray:
    """Product of a sparse matrix with a dense matrix (or vector)."""
    dense = np.asarray(dense, dtype=np.float64)
    if dense.ndim not in (1, 2):
        raise ShapeError("dense operand must be 1- or 2-dimensional")
    if matrix.n_cols != dense.shape[0]:
        raise ShapeError(
            f"cannot multiply {matrix.shape} by dense with leading dim {dense.shape[0]}"
        )
    return matrix.to_scipy() @ dense


def spsp(a: SparseMatrix, b: SparseMatrix) -> SparseMatrix:
    """Sparse-sparse product in canonical form."""
    if a.n_cols != b.n_rows:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return SparseMatrix.from_scipy(a.to_scipy() @ b.to_scipy())


def hadamard(a: SparseMatrix, b: SparseMatrix) -> SparseMatrix:
    """Elementwise product; the result support is contained in both operands'."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return SparseMatrix.from_scipy(a.to_scipy().multiply(b.to_scipy()))


def transpose(a: SparseMatrix) -> SparseMatrix:
    return SparseMatrix.from_scipy(a.to_scipy().transpose())


def sym_normalize(a: SparseMatrix) -> SparseMatrix:
    """Symmetric degree normalization: entry (i, j) is divided by
    sqrt(rowsum_i * rowsum_j).

    Rows (and columns) with zero sum stay identically zero instead of
    producing NaN, so isolated nodes are harmless.
    """
    if a.n_rows != a.n_cols:
        raise ShapeError("sym_normalize requires a square matrix")
    if a.nnz and a.values.min() < 0:
        raise DomainError("sym_normalize requires non-negative values")
    csr = a.to_scipy()
    rowsum = np.asarray(csr.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(rowsum)
    positive = rowsum > 0
    inv_sqrt[positive] = 1.0 / np.sqrt(rowsum[positive])
    scaling = sp.diags(inv_sqrt)
    return SparseMatrix.from_scipy(scaling @ csr @ scaling)


def is_symmetric(a: SparseMatrix, tol: float = 0.0) -> bool:
    if a.n_rows != a.n_cols:
        return False
    diff = a.to_scipy() - a.to_scipy().transpose()
    if diff.nnz == 0:
        return True
    return bool(np.max(np.abs(diff.data)) <= tol)

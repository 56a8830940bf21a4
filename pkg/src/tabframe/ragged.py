"""Ragged tensor layouts for variable-width column data.

Two containers live here:

* :class:`MultiNestedTensor` — a compressed ragged tensor of logical shape
  ``[N, C, *]`` where every cell ``(i, j)`` may hold a different number of
  scalars.  Data is stored as a flat ``val`` array plus an offsets array
  ``ptr`` of length ``N * C + 1``; cell ``(i, j)`` occupies
  ``val[ptr[C * i + j] : ptr[C * i + j + 1]]``.

* :class:`MultiEmbeddingTensor` — a dense layout of logical shape
  ``[N, C, D]`` where the embedding width ``D_j`` varies per column but not
  per row.  Columns are packed side by side into one ``[N, sum(D_j)]`` matrix
  with prefix-sum offsets.

Both are immutable after construction; row selection returns new, re-compacted
containers and never aliases dangling storage.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import (
    IndexOutOfBoundsError,
    MixedDtypeError,
    RaggedShapeError,
    RowCountMismatchError,
    ShapeMismatchError,
)


def _check_row_indices(rows: Sequence[int] | np.ndarray, num_rows: int) -> np.ndarray:
    idx = np.asarray(rows, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= num_rows):
        raise IndexOutOfBoundsError(
            f"row indices must be in [0, {num_rows}); got range "
            f"[{idx.min() if idx.size else 0}, {idx.max() if idx.size else 0}]"
        )
    return idx


class MultiNestedTensor:
    """Compressed ragged tensor ``(val, ptr)`` of shape ``[N, C, *]``.

    ``val`` holds all cell elements flattened in row-major cell order and
    ``ptr`` holds cumulative offsets, so random access to any cell is O(1)
    offset arithmetic plus a slice.

    Example::

        t = MultiNestedTensor.from_nested([[[0, 1, 2], [3]], [[4], [5, 6]]])
        t.val   # array([0, 1, 2, 3, 4, 5, 6])
        t.ptr   # array([0, 3, 4, 5, 7])
        t.get(1, 1)  # array([5, 6])
    """

    __slots__ = ("num_rows", "num_cols", "val", "ptr")

    def __init__(self, num_rows: int, num_cols: int, val: np.ndarray, ptr: np.ndarray):
        val = np.asarray(val)
        ptr = np.asarray(ptr, dtype=np.int64)
        if ptr.ndim != 1 or val.ndim != 1:
            raise RaggedShapeError("val and ptr must be one-dimensional")
        if ptr.shape[0] != num_rows * num_cols + 1:
            raise RaggedShapeError(
                f"ptr must have length N*C+1 = {num_rows * num_cols + 1}, got {ptr.shape[0]}"
            )
        if ptr[0] != 0 or ptr[-1] != val.shape[0]:
            raise RaggedShapeError("ptr must start at 0 and end at len(val)")
        if np.any(np.diff(ptr) < 0):
            raise RaggedShapeError("ptr must be non-decreasing")
        self.num_rows = num_rows
        self.num_cols = num_cols
        self.val = val
        self.ptr = ptr

    @classmethod
    def from_nested(cls, rows: Sequence[Sequence[Sequence]], num_cols: int | None = None) -> "MultiNestedTensor":
        """Build from nested lists shaped ``[N][C][variable]``.

        Every row must contain the same number of cells; cell elements must be
        all-integer or all-float (one scalar dtype per tensor).
        """
        n = len(rows)
        if n == 0:
            c = 0 if num_cols is None else num_cols
            return cls(0, c, np.empty(0, dtype=np.int64), np.zeros(1, dtype=np.int64))
        c = len(rows[0])
        lengths = np.empty(n * c, dtype=np.int64)
        flat: list = []
        saw_float = False
        saw_int = False
        k = 0
        for i, row in enumerate(rows):
            if len(row) != c:
                raise RaggedShapeError(
                    f"row {i} has {len(row)} cells, expected {c}"
                )
            for cell in row:
                lengths[k] = len(cell)
                k += 1
                for x in cell:
                    if isinstance(x, (bool, int, np.integer)):
                        saw_int = True
                    elif isinstance(x, (float, np.floating)):
                        saw_float = True
                    else:
                        raise MixedDtypeError(f"cell element {x!r} is not a scalar")
                    flat.append(x)
        if saw_int and saw_float:
            raise MixedDtypeError("cells mix integer and floating scalars")
        dtype = np.float64 if saw_float else np.int64
        ptr = np.zeros(n * c + 1, dtype=np.int64)
        np.cumsum(lengths, out=ptr[1:])
        val = np.asarray(flat, dtype=dtype)
        return cls(n, c, val, ptr)

    def get(self, i: int, j: int) -> np.ndarray:
        """Cell ``(i, j)``: ``val[ptr[C*i + j] : ptr[C*i + j + 1]]``."""
        if not (0 <= i < self.num_rows) or not (0 <= j < self.num_cols):
            raise IndexOutOfBoundsError(
                f"cell ({i}, {j}) outside [{self.num_rows}, {self.num_cols}]"
            )
        k = self.num_cols * i + j
        return self.val[self.ptr[k]: self.ptr[k + 1]]

    def select_rows(self, rows: Sequence[int] | np.ndarray) -> "MultiNestedTensor":
        """Gather rows (duplicates allowed) into a re-compacted tensor."""
        idx = _check_row_indices(rows, self.num_rows)
        c = self.num_cols
        lengths = np.diff(self.ptr).reshape(self.num_rows, c) if self.num_rows else \
            np.zeros((0, c), dtype=np.int64)
        new_lengths = lengths[idx].reshape(-1)
        new_ptr = np.zeros(idx.size * c + 1, dtype=np.int64)
        np.cumsum(new_lengths, out=new_ptr[1:])
        # each source row occupies one contiguous span of val
        pieces = [self.val[self.ptr[c * i]: self.ptr[c * i + c]] for i in idx]
        new_val = np.concatenate(pieces) if pieces else self.val[:0].copy()
        return MultiNestedTensor(int(idx.size), c, new_val, new_ptr)

    def to_nested(self) -> list[list[list]]:
        return [
            [self.get(i, j).tolist() for j in range(self.num_cols)]
            for i in range(self.num_rows)
        ]

    def lengths(self) -> np.ndarray:
        """Per-cell lengths, shape ``[N, C]``."""
        return np.diff(self.ptr).reshape(self.num_rows, self.num_cols)

    def column_values(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """All cells of column ``j`` concatenated, plus offsets of length N+1."""
        if not (0 <= j < self.num_cols):
            raise IndexOutOfBoundsError(f"column {j} outside [0, {self.num_cols})")
        cells = [self.get(i, j) for i in range(self.num_rows)]
        offsets = np.zeros(self.num_rows + 1, dtype=np.int64)
        np.cumsum([c.shape[0] for c in cells], out=offsets[1:])
        values = np.concatenate(cells) if cells else self.val[:0].copy()
        return values, offsets

    def equals(self, other: "MultiNestedTensor") -> bool:
        return (
            self.num_rows == other.num_rows
            and self.num_cols == other.num_cols
            and self.val.dtype == other.val.dtype
            and np.array_equal(self.ptr, other.ptr)
            and np.array_equal(self.val, other.val)
        )

    def __repr__(self) -> str:
        return (
            f"MultiNestedTensor(num_rows={self.num_rows}, num_cols={self.num_cols}, "
            f"nnz={self.val.shape[0]}, dtype={self.val.dtype})"
        )


class MultiEmbeddingTensor:
    """Per-column embeddings of shape ``[N, C, D]`` with column-varying ``D_j``.

    Column ``j`` occupies ``values[:, offsets[j] : offsets[j + 1]]`` of the
    packed ``[N, sum(D_j)]`` matrix.
    """

    __slots__ = ("num_rows", "num_cols", "dims", "offsets", "values")

    def __init__(self, num_rows: int, dims: Sequence[int], values: np.ndarray):
        dims = tuple(int(d) for d in dims)
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeMismatchError(f"values must be 2-D, got shape {values.shape}")
        if values.shape[0] != num_rows:
            raise RowCountMismatchError(
                f"values has {values.shape[0]} rows, expected {num_rows}"
            )
        if any(d < 1 for d in dims):
            raise ShapeMismatchError(f"column dims must be >= 1, got {dims}")
        if values.shape[1] != sum(dims):
            raise ShapeMismatchError(
                f"values width {values.shape[1]} != sum of dims {sum(dims)}"
            )
        self.num_rows = num_rows
        self.num_cols = len(dims)
        self.dims = dims
        self.offsets = np.zeros(len(dims) + 1, dtype=np.int64)
        np.cumsum(dims, out=self.offsets[1:])
        self.values = values

    @classmethod
    def from_columns(cls, cols: Sequence[np.ndarray]) -> "MultiEmbeddingTensor":
        """Pack per-column matrices ``[N, D_j]`` side by side."""
        mats = [np.asarray(c, dtype=np.float64) for c in cols]
        if not mats:
            raise ShapeMismatchError("need at least one column")
        for m in mats:
            if m.ndim != 2:
                raise ShapeMismatchError(f"columns must be 2-D, got shape {m.shape}")
        n = mats[0].shape[0]
        for k, m in enumerate(mats):
            if m.shape[0] != n:
                raise RowCountMismatchError(
                    f"column 0 has {n} rows but column {k} has {m.shape[0]}"
                )
        dims = [m.shape[1] for m in mats]
        values = np.concatenate(mats, axis=1) if len(mats) > 1 else mats[0].copy()
        return cls(n, dims, values)

    def get(self, i: int, j: int) -> np.ndarray:
        """Embedding of cell ``(i, j)``, a vector of length ``dims[j]``."""
        if not (0 <= i < self.num_rows) or not (0 <= j < self.num_cols):
            raise IndexOutOfBoundsError(
                f"cell ({i}, {j}) outside [{self.num_rows}, {self.num_cols}]"
            )
        return self.values[i, self.offsets[j]: self.offsets[j + 1]]

    def column(self, j: int) -> np.ndarray:
        """All rows of column ``j``, shape ``[N, D_j]``."""
        if not (0 <= j < self.num_cols):
            raise IndexOutOfBoundsError(f"column {j} outside [0, {self.num_cols})")
        return self.values[:, self.offsets[j]: self.offsets[j + 1]]

    def select_rows(self, rows: Sequence[int] | np.ndarray) -> "MultiEmbeddingTensor":
        idx = _check_row_indices(rows, self.num_rows)
        return MultiEmbeddingTensor(int(idx.size), self.dims, self.values[idx])

    def equals(self, other: "MultiEmbeddingTensor") -> bool:
        return (
            self.num_rows == other.num_rows
            and self.dims == other.dims
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self) -> str:
        return (
            f"MultiEmbeddingTensor(num_rows={self.num_rows}, dims={list(self.dims)})"
        )

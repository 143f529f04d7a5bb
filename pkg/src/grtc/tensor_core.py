"""Sparse tensor observations, CP factors and the index algebra between them.

Indices are 0-based everywhere in this module.  Files use 1-based indices and
are converted in :mod:`grtc.io`.

The mode-``i`` unfolding follows the column-index map

    col = sum_{n != i} idx[n] * I_n,   I_n = prod_{j < n, j != i} m_j

so the lowest remaining mode varies fastest.  This matches the Khatri-Rao
order ``U^(k) (.) ... (.) U^(i+1) (.) U^(i-1) (.) ... (.) U^(1)`` used by
:func:`khatri_rao_excluding`.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp


def check_shape(shape) -> tuple[int, ...]:
    shape = tuple(int(m) for m in shape)
    if len(shape) < 2:
        raise ValueError(f"tensor order must be at least 2, got shape {shape}")
    if any(m < 1 for m in shape):
        raise ValueError(f"all dimensions must be positive, got {shape}")
    if np.prod(np.array(shape, dtype=object)) > np.iinfo(np.int64).max:
        raise OverflowError(f"shape {shape} does not fit in int64 linear indices")
    return shape


# --------------------------------------------------------------------------
# Kronecker / Khatri-Rao
# --------------------------------------------------------------------------

def kronecker(u, v) -> np.ndarray:
    """Kronecker product of two vectors, ``u`` index varying slowest."""
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    return (u[:, None] * v[None, :]).ravel()


def khatri_rao(mats: Sequence[np.ndarray]) -> np.ndarray:
    """Column-wise Kronecker product ``mats[0] (.) mats[1] (.) ...``.

    The first matrix's row index varies slowest.
    """
    if len(mats) == 0:
        raise ValueError("khatri_rao needs at least one matrix")
    mats = [np.asarray(M, dtype=float) for M in mats]
    R = mats[0].shape[1]
    for M in mats:
        if M.ndim != 2 or M.shape[1] != R:
            raise ValueError("all Khatri-Rao operands must be 2-D with the same column count")
    out = mats[0]
    for M in mats[1:]:
        out = (out[:, None, :] * M[None, :, :]).reshape(-1, R)
    return out


def khatri_rao_excluding(factors: Sequence[np.ndarray], exclude) -> np.ndarray:
    """Khatri-Rao product of all factors not in ``exclude``, highest mode first.

    Row ``col`` of the result is the row of the mode-``i`` unfolding's column
    ``col`` when ``exclude == {i}``.
    """
    if np.isscalar(exclude):
        exclude = {int(exclude)}
    keep = [U for n, U in enumerate(factors) if n not in exclude]
    return khatri_rao(keep[::-1])


def khatri_rao_col_norms_sq(mats: Sequence[np.ndarray]) -> np.ndarray:
    """Squared column norms of ``khatri_rao(mats)`` without forming it.

    Uses ``||a_r (x) b_r||^2 = ||a_r||^2 ||b_r||^2``.
    """
    if len(mats) == 0:
        raise ValueError("need at least one factor")
    out = None
    for M in mats:
        sq = np.einsum("ij,ij->j", M, M)
        out = sq if out is None else out * sq
    return out


# --------------------------------------------------------------------------
# matricization index map
# --------------------------------------------------------------------------

def _mode_strides(shape, mode):
    strides = np.zeros(len(shape), dtype=np.int64)
    step = 1
    for n, m in enumerate(shape):
        if n == mode:
            continue
        strides[n] = step
        step *= m
    return strides


def mat_index(shape, mode: int, multi_index) -> tuple[int, int]:
    """Position ``(row, col)`` of a tensor entry in the mode-``mode`` unfolding."""
    shape = check_shape(shape)
    if not 0 <= mode < len(shape):
        raise IndexError(f"mode {mode} out of range for order {len(shape)}")
    idx = tuple(int(v) for v in multi_index)
    if len(idx) != len(shape) or any(not 0 <= v < m for v, m in zip(idx, shape)):
        raise IndexError(f"index {idx} out of bounds for shape {shape}")
    strides = _mode_strides(shape, mode)
    return idx[mode], int(sum(v * s for v, s in zip(idx, strides)))


def unfold_columns(indices: np.ndarray, shape, mode: int) -> np.ndarray:
    """Vectorized column part of :func:`mat_index` for an ``(nnz, k)`` array."""
    strides = _mode_strides(shape, mode)
    return np.asarray(indices, dtype=np.int64) @ strides


def fold_index(shape, mode: int, row: int, col: int) -> tuple[int, ...]:
    """Inverse of :func:`mat_index`."""
    shape = check_shape(shape)
    idx = [0] * len(shape)
    idx[mode] = int(row)
    rem = int(col)
    for n, m in enumerate(shape):
        if n == mode:
            continue
        idx[n] = rem % m
        rem //= m
    if rem or not 0 <= row < shape[mode]:
        raise IndexError(f"({row}, {col}) outside the mode-{mode} unfolding of {shape}")
    return tuple(idx)


def unfold_dense(T: np.ndarray, mode: int) -> np.ndarray:
    """Mode-``mode`` unfolding of a dense array, consistent with :func:`mat_index`."""
    return np.reshape(np.moveaxis(T, mode, 0), (T.shape[mode], -1), order="F")


def fold_dense(Z: np.ndarray, mode: int, shape) -> np.ndarray:
    rest = [m for n, m in enumerate(shape) if n != mode]
    return np.moveaxis(np.reshape(Z, [shape[mode]] + rest, order="F"), 0, mode)


# --------------------------------------------------------------------------
# observations
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ModeGrouping:
    """Observations of one mode sorted by unfolding row.

    ``order`` permutes canonical entries into row-grouped order; entries of
    row ``s`` occupy ``order[indptr[s]:indptr[s + 1]]``.
    """

    mode: int
    order: np.ndarray
    indptr: np.ndarray
    rows: np.ndarray
    cols: np.ndarray

    def row_counts(self) -> np.ndarray:
        return np.diff(self.indptr)


class SparseObservations:
    """Observed entries of a tensor in canonical COO form.

    Entries are sorted lexicographically by multi-index and duplicates are
    rejected.  Arrays are read-only; per-mode groupings are built lazily.
    """

    def __init__(self, shape, indices, values, *, check=True):
        shape = check_shape(shape)
        indices = np.array(indices, dtype=np.int64, copy=True).reshape(-1, len(shape))
        values = np.array(values, dtype=np.float64, copy=True).ravel()
        if indices.shape[0] != values.shape[0]:
            raise ValueError("indices and values have different lengths")
        if check:
            if indices.size and ((indices < 0).any() or (indices >= np.array(shape)).any()):
                bad = np.nonzero(((indices < 0) | (indices >= np.array(shape))).any(axis=1))[0][0]
                raise IndexError(f"index {tuple(indices[bad])} out of bounds for shape {shape}")
            if not np.all(np.isfinite(values)):
                raise ValueError("observed values must be finite")
        order = np.lexsort(indices.T[::-1]) if indices.size else np.arange(0)
        indices = indices[order]
        values = values[order]
        if indices.shape[0] > 1:
            same = np.all(indices[1:] == indices[:-1], axis=1)
            if same.any():
                dup = tuple(indices[np.nonzero(same)[0][0]])
                raise ValueError(f"duplicate observation at index {dup}")
        indices.flags.writeable = False
        values.flags.writeable = False
        self.shape = shape
        self.indices = indices
        self.values = values
        self._groupings = {}
        self._lock = threading.Lock()

    # construction helpers -------------------------------------------------

    @classmethod
    def from_dense(cls, T: np.ndarray, mask=None) -> "SparseObservations":
        T = np.asarray(T, dtype=float)
        mask = np.ones(T.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        idx = np.argwhere(mask)
        return cls(T.shape, idx, T[mask])

    @classmethod
    def from_linear(cls, shape, linear, values) -> "SparseObservations":
        idx = np.stack(np.unravel_index(np.asarray(linear, dtype=np.int64), shape), axis=1)
        return cls(shape, idx, values)

    def linear_indices(self) -> np.ndarray:
        return np.ravel_multi_index(tuple(self.indices.T), self.shape)

    def with_values(self, values) -> "SparseObservations":
        return SparseObservations(self.shape, self.indices, values, check=False)

    def subset(self, selector) -> "SparseObservations":
        return SparseObservations(self.shape, self.indices[selector], self.values[selector], check=False)

    def to_dense(self, fill=0.0) -> np.ndarray:
        T = np.full(self.shape, fill, dtype=float)
        T[tuple(self.indices.T)] = self.values
        return T

    def mask(self) -> np.ndarray:
        M = np.zeros(self.shape, dtype=bool)
        M[tuple(self.indices.T)] = True
        return M

    # accessors -------------------------------------------------------------

    @property
    def order(self) -> int:
        return len(self.shape)

    @property
    def nnz(self) -> int:
        return self.values.shape[0]

    def __len__(self):
        return self.nnz

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def equals(self, other) -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )

    def __repr__(self):
        return f"SparseObservations(shape={self.shape}, nnz={self.nnz})"

    def grouping(self, mode: int) -> ModeGrouping:
        """Entries grouped by row of the mode-``mode`` unfolding (cached)."""
        g = self._groupings.get(mode)
        if g is not None:
            return g
        with self._lock:
            g = self._groupings.get(mode)
            if g is None:
                g = self._build_grouping(mode)
                self._groupings[mode] = g
        return g

    def _build_grouping(self, mode):
        if not 0 <= mode < self.order:
            raise IndexError(f"mode {mode} out of range")
        rows = self.indices[:, mode]
        cols = unfold_columns(self.indices, self.shape, mode)
        order = np.lexsort((cols, rows))
        counts = np.bincount(rows, minlength=self.shape[mode])
        indptr = np.zeros(self.shape[mode] + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        rows, cols = rows[order], cols[order]
        for a in (order, indptr, rows, cols):
            a.flags.writeable = False
        return ModeGrouping(mode, order, indptr, rows, cols)


def unfold_observations(obs: SparseObservations, mode: int) -> sp.csr_matrix:
    """Observed entries as a sparse mode-``mode`` unfolding."""
    g = obs.grouping(mode)
    ncols = int(np.prod([m for n, m in enumerate(obs.shape) if n != mode]))
    return sp.csr_matrix(
        (obs.values[g.order], g.cols, g.indptr), shape=(obs.shape[mode], ncols)
    )


def fold_observations(Z: sp.spmatrix, mode: int, shape) -> SparseObservations:
    """Inverse of :func:`unfold_observations`."""
    Z = sp.coo_matrix(Z)
    shape = check_shape(shape)
    idx = np.zeros((Z.nnz, len(shape)), dtype=np.int64)
    idx[:, mode] = Z.row
    rem = Z.col.astype(np.int64)
    for n, m in enumerate(shape):
        if n == mode:
            continue
        idx[:, n] = rem % m
        rem = rem // m
    return SparseObservations(shape, idx, Z.data)


# --------------------------------------------------------------------------
# CP factors
# --------------------------------------------------------------------------

class CPFactors:
    """Factor matrices ``U^(1), ..., U^(k)`` of a rank-``R`` CP model."""

    def __init__(self, factors: Sequence[np.ndarray]):
        factors = [np.array(U, dtype=np.float64) for U in factors]
        if len(factors) < 2:
            raise ValueError("need at least two factor matrices")
        R = factors[0].shape[1] if factors[0].ndim == 2 else -1
        for U in factors:
            if U.ndim != 2 or U.shape[1] != R:
                raise ValueError("factor matrices must be 2-D with a common column count")
        if R < 1:
            raise ValueError("rank must be at least 1")
        self.factors = factors

    @classmethod
    def random(cls, shape, rank, rng=None) -> "CPFactors":
        """Standard Gaussian factors."""
        rng = np.random.default_rng(rng)
        return cls([rng.standard_normal((m, rank)) for m in shape])

    @classmethod
    def zeros(cls, shape, rank) -> "CPFactors":
        return cls([np.zeros((m, rank)) for m in shape])

    @property
    def rank(self) -> int:
        return self.factors[0].shape[1]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(U.shape[0] for U in self.factors)

    @property
    def order(self) -> int:
        return len(self.factors)

    def __getitem__(self, i):
        return self.factors[i]

    def __len__(self):
        return len(self.factors)

    def __iter__(self):
        return iter(self.factors)

    def copy(self) -> "CPFactors":
        return CPFactors([U.copy() for U in self.factors])

    def replace(self, mode: int, U) -> "CPFactors":
        out = list(self.factors)
        out[mode] = U
        return CPFactors(out)

    def ravel(self) -> np.ndarray:
        return np.concatenate([U.ravel() for U in self.factors])

    @classmethod
    def unravel(cls, x, shape, rank) -> "CPFactors":
        out, pos = [], 0
        for m in shape:
            out.append(np.asarray(x[pos:pos + m * rank]).reshape(m, rank))
            pos += m * rank
        return cls(out)

    def full(self) -> np.ndarray:
        """Dense tensor (small instances only)."""
        Z0 = self.factors[0] @ khatri_rao_excluding(self.factors, 0).T
        return fold_dense(Z0, 0, self.shape)

    def check_shape(self, shape):
        if tuple(shape) != self.shape:
            raise ValueError(f"factor shape {self.shape} does not match tensor shape {tuple(shape)}")


def khatri_rao_rows(factors: Sequence[np.ndarray], indices: np.ndarray, mode: int) -> np.ndarray:
    """Rows of ``khatri_rao_excluding(factors, mode)`` at the given entries.

    Row ``p`` is ``prod_{j != mode} U^(j)[indices[p, j], :]``.
    """
    R = factors[0].shape[1]
    D = np.ones((indices.shape[0], R))
    for j, U in enumerate(factors):
        if j != mode:
            D *= U[indices[:, j]]
    return D


def cp_values(factors, indices) -> np.ndarray:
    """CP model values at an ``(nnz, k)`` array of 0-based indices."""
    factors = list(factors)
    indices = np.asarray(indices, dtype=np.int64)
    R = factors[0].shape[1]
    P = np.ones((indices.shape[0], R))
    for j, U in enumerate(factors):
        P *= U[indices[:, j]]
    return P.sum(axis=1)


def cp_reconstruct_at(factors, multi_index) -> float:
    factors = list(factors)
    idx = tuple(int(v) for v in multi_index)
    if len(idx) != len(factors) or any(not 0 <= v < U.shape[0] for v, U in zip(idx, factors)):
        raise IndexError(f"index {idx} out of bounds")
    return float(cp_values(factors, np.array([idx]))[0])


def residual_on_omega(factors, obs: SparseObservations) -> SparseObservations:
    """Observed values minus model values, on the same index set."""
    if isinstance(factors, CPFactors):
        factors.check_shape(obs.shape)
    elif tuple(U.shape[0] for U in factors) != obs.shape:
        raise ValueError("factor shapes do not match observations")
    return obs.with_values(obs.values - cp_values(factors, obs.indices))

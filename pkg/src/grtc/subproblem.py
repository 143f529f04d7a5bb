"""Per-mode quadratic subproblem of the graph-regularized CP objective.

With every factor except ``U = U^(i)`` fixed, the objective restricted to
``x = vec(U^T)`` (which is ``U.ravel()`` for a C-ordered ``m_i x R`` array) is

    g(x) = 1/2 x^T M x - vec(Q)^T x + const,
    M = A + lambda_i (L (x) I_R) + I_{m_i} (x) C.

``A`` is block diagonal with blocks ``A_s = sum_{l in Omega_s} d_l^T d_l``
where ``d_l`` are rows of the Khatri-Rao product of the other factors.
Nothing of size ``m_i R x m_i R`` is formed on the CG path.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .graph import ShiftedLaplacian
from .tensor_core import (
    CPFactors,
    SparseObservations,
    cp_values,
    khatri_rao_col_norms_sq,
    khatri_rao_rows,
)

# proximal ridge used when lambda_i == 0 so that M stays positive definite
UNREG_RIDGE = 1e-10


def normalize_laplacians(laplacians, shape) -> list[ShiftedLaplacian]:
    """One :class:`ShiftedLaplacian` per mode; ``None`` means ``L = I``."""
    if laplacians is None:
        laplacians = [None] * len(shape)
    if len(laplacians) != len(shape):
        raise ValueError(f"expected {len(shape)} Laplacians, got {len(laplacians)}")
    out = []
    for n, (L, m) in enumerate(zip(laplacians, shape)):
        if L is None:
            L = ShiftedLaplacian.identity(m)
        elif not isinstance(L, ShiftedLaplacian):
            L = ShiftedLaplacian(sp.csr_matrix(L), 0.0)
        if L.n != m:
            raise ValueError(f"Laplacian for mode {n} has size {L.n}, expected {m}")
        out.append(L)
    return out


def normalize_lambdas(lambdas, k) -> np.ndarray:
    lam = np.broadcast_to(np.asarray(lambdas, dtype=float), (k,)).copy()
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("regularization weights must be finite and non-negative")
    return lam


def build_C(factors, mode: int, lambdas) -> np.ndarray:
    """Diagonal of ``C^(i)`` as a length-``R`` vector.

    Entry ``r`` is ``sum_{j != i} lambda_j prod_{n != i, j} ||U^(n)[:, r]||^2``;
    an empty product (order 2) is 1.
    """
    factors = list(factors)
    k = len(factors)
    lam = normalize_lambdas(lambdas, k)
    R = factors[0].shape[1]
    c = np.zeros(R)
    for j in range(k):
        if j == mode or lam[j] == 0:
            continue
        others = [factors[n] for n in range(k) if n not in (mode, j)]
        c += lam[j] * (khatri_rao_col_norms_sq(others) if others else np.ones(R))
    return c


class SubproblemOperator:
    """Matrix-free ``M^(i)`` for one mode at fixed other factors.

    Observations are kept in row-grouped order together with the matching
    Khatri-Rao rows ``D``, so ``A x`` and ``Q`` are single passes over
    ``Omega``.  Vectors use the ``x = U.ravel()`` layout.
    """

    def __init__(self, obs: SparseObservations, factors, mode: int, laplacian: ShiftedLaplacian,
                 lambdas, ridge=None):
        factors = list(factors)
        lam = normalize_lambdas(lambdas, len(factors))
        g = obs.grouping(mode)
        self.mode = mode
        self.m = obs.shape[mode]
        self.R = factors[0].shape[1]
        self.indptr = g.indptr
        self.D = khatri_rao_rows(factors, obs.indices[g.order], mode)
        self.values = obs.values[g.order]
        self.laplacian = laplacian
        self.lam = float(lam[mode])
        self.cdiag = build_C(factors, mode, lam)
        if ridge is None:
            ridge = UNREG_RIDGE if self.lam == 0 else 0.0
        self.ridge = float(ridge)
        self.size = self.m * self.R

    def apply_A(self, X) -> np.ndarray:
        """``A^(i)`` applied to ``X`` (``m_i x R``, rows are rows of ``U``)."""
        return _kernels.apply_gram(self.indptr, self.D, np.ascontiguousarray(X, dtype=float))

    def apply_matrix(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = self.apply_A(X)
        out += X * self.cdiag
        if self.lam:
            out += self.lam * self.laplacian.apply(X)
        if self.ridge:
            out += self.ridge * X
        return out

    def apply(self, x) -> np.ndarray:
        """``M x`` for a flat vector ``x = vec(U^T)``."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.size,):
            raise ValueError(f"expected a vector of length {self.size}, got shape {x.shape}")
        return self.apply_matrix(x.reshape(self.m, self.R)).ravel()

    __call__ = apply

    def rhs_matrix(self) -> np.ndarray:
        """``Q^(i) = (P_Omega T_(i)) D`` as an ``m_i x R`` array."""
        return _kernels.weighted_rows(self.indptr, self.D, self.values)

    def gram_blocks(self) -> np.ndarray:
        """Dense diagonal blocks ``A_s`` of ``A^(i)``, shape ``(m_i, R, R)``."""
        return _kernels.gram_blocks(self.indptr, self.D)

    def to_dense(self) -> np.ndarray:
        """Assembled ``M^(i)`` (reference use only)."""
        blocks = self.gram_blocks()
        M = sp.block_diag(list(blocks), format="csr").toarray() if self.m else np.zeros((0, 0))
        if self.lam:
            M += self.lam * np.kron(self.laplacian.toarray(), np.eye(self.R))
        M += np.kron(np.eye(self.m), np.diag(self.cdiag))
        if self.ridge:
            M += self.ridge * np.eye(self.size)
        return M

    def row_system(self, j: int, eta: float, B_row, Y_row, Q=None):
        """Dense ``R x R`` system and right-hand side of the row-wise ADMM update."""
        s, e = self.indptr[j], self.indptr[j + 1]
        Dj = self.D[s:e]
        A = Dj.T @ Dj + np.diag(self.cdiag) + eta * np.eye(self.R)
        q = Dj.T @ self.values[s:e] if Q is None else Q[j]
        return A, q + eta * np.asarray(B_row, dtype=float) + np.asarray(Y_row, dtype=float)

    def row_systems(self, eta: float, B, Y):
        """All row systems stacked: ``(m, R, R)`` matrices and ``(m, R)`` right-hand sides."""
        A = self.gram_blocks()
        A += np.diag(self.cdiag + eta)[None, :, :]
        return A, self.rhs_matrix() + eta * B + Y


def build_Q(obs: SparseObservations, factors, mode: int) -> np.ndarray:
    """``Q^(i)`` computed in one pass over the observations."""
    factors = list(factors)
    g = obs.grouping(mode)
    D = khatri_rao_rows(factors, obs.indices[g.order], mode)
    return _kernels.weighted_rows(g.indptr, D, obs.values[g.order])


def apply_M(op: SubproblemOperator, x) -> np.ndarray:
    return op.apply(x)


def build_row_system(op: SubproblemOperator, j: int, eta: float, B_row, Y_row):
    return op.row_system(j, eta, B_row, Y_row)


def kr_penalty(factors) -> np.ndarray:
    """``||(U^(j))^{(.) j != i}||_F^2`` for every mode ``i``."""
    factors = list(factors)
    sq = np.array([np.einsum("ij,ij->j", U, U) for U in factors])  # (k, R)
    k = len(factors)
    return np.array([np.prod(np.delete(sq, i, axis=0), axis=0).sum() for i in range(k)])


def objective_value(factors, obs: SparseObservations, laplacians, lambdas) -> float:
    """Data misfit plus graph and Khatri-Rao regularizers, all halved."""
    factors = list(factors)
    if tuple(U.shape[0] for U in factors) != obs.shape:
        raise ValueError("factor shapes do not match observations")
    laps = normalize_laplacians(laplacians, obs.shape)
    lam = normalize_lambdas(lambdas, len(factors))
    res = obs.values - cp_values(factors, obs.indices)
    f = 0.5 * float(res @ res)
    if lam.any():
        kr = kr_penalty(factors)
        for i, U in enumerate(factors):
            if lam[i]:
                f += 0.5 * lam[i] * (laps[i].quadratic(U) + kr[i])
    return f


def objective_gradient(factors, obs: SparseObservations, laplacians, lambdas) -> CPFactors:
    """Blockwise gradient ``M^(i) x - vec(Q^(i))`` at the given factors."""
    factors = list(factors)
    laps = normalize_laplacians(laplacians, obs.shape)
    grads = []
    for i, U in enumerate(factors):
        op = SubproblemOperator(obs, factors, i, laps[i], lambdas, ridge=0.0)
        grads.append(op.apply_matrix(U) - op.rhs_matrix())
    return CPFactors(grads)


def gradient_norm(factors, obs, laplacians, lambdas) -> float:
    return float(np.linalg.norm(objective_gradient(factors, obs, laplacians, lambdas).ravel()))


def subproblem_value(op: SubproblemOperator, x, Q=None) -> float:
    """``1/2 x^T M x - vec(Q)^T x`` (ridge excluded)."""
    x = np.asarray(x, dtype=float)
    X = x.reshape(op.m, op.R)
    Q = op.rhs_matrix() if Q is None else Q
    MX = op.apply_matrix(X) - op.ridge * X
    return 0.5 * float(np.sum(X * MX)) - float(np.sum(Q * X))


__all__ = (
    "SubproblemOperator",
    "build_C",
    "build_Q",
    "apply_M",
    "build_row_system",
    "objective_value",
    "objective_gradient",
    "gradient_norm",
    "normalize_laplacians",
    "normalize_lambdas",
    "subproblem_value",
    "UNREG_RIDGE",
)

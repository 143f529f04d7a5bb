"""Graph adjacency constructions and (shifted) graph Laplacians."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial.distance import cdist, pdist

INV_DIST_DELTA = 1e-8


def check_adjacency(W) -> sp.csr_matrix:
    """Validate a weighted adjacency matrix and return it as CSR."""
    W = sp.csr_matrix(W, dtype=np.float64)
    n, n2 = W.shape
    if n != n2:
        raise ValueError(f"adjacency must be square, got {W.shape}")
    if W.nnz and not np.all(np.isfinite(W.data)):
        raise ValueError("adjacency weights must be finite")
    if W.nnz and W.data.min() < 0:
        raise ValueError("adjacency weights must be non-negative")
    if W.diagonal().any():
        raise ValueError("adjacency must have a zero diagonal")
    if (W != W.T).nnz:
        raise ValueError("adjacency must be exactly symmetric")
    W.eliminate_zeros()
    W.sort_indices()
    return W


def laplacian_from_adjacency(W) -> sp.csr_matrix:
    """``diag(W 1) - W`` for a symmetric non-negative adjacency."""
    W = check_adjacency(W)
    lap = sp.diags(np.asarray(W.sum(axis=1)).ravel()) - W
    lap = sp.csr_matrix(lap)
    lap.sort_indices()
    return lap


def laplacian_quadratic(lap, F) -> float:
    """``<F F^T, lap> = trace(F^T lap F)`` without forming ``F F^T``."""
    F = np.asarray(F, dtype=float)
    if F.ndim == 1:
        F = F[:, None]
    if lap.shape[0] != F.shape[0]:
        raise ValueError(f"Laplacian of size {lap.shape[0]} vs {F.shape[0]} rows")
    return float(np.sum(F * (lap @ F)))


@dataclass(frozen=True)
class ShiftedLaplacian:
    """``lambda_L * lap + I``; the identity is kept implicit."""

    lap: sp.csr_matrix
    lambda_L: float = 0.0

    def __post_init__(self):
        if self.lambda_L < 0:
            raise ValueError("lambda_L must be non-negative")

    @classmethod
    def identity(cls, n: int) -> "ShiftedLaplacian":
        return cls(sp.csr_matrix((n, n)), 0.0)

    @property
    def n(self) -> int:
        return self.lap.shape[0]

    @property
    def nnz(self) -> int:
        # stored entries of lambda_L * lap + I
        if self.lambda_L == 0:
            return self.n
        return self.lap.nnz + int(np.count_nonzero(self.lap.diagonal() == 0))

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[0] != self.n:
            raise ValueError(f"shifted Laplacian of size {self.n} applied to {X.shape[0]} rows")
        if self.lambda_L == 0:
            return X.copy()
        return self.lambda_L * (self.lap @ X) + X

    def quadratic(self, F) -> float:
        """``<F F^T, L>`` for the shifted matrix ``L``."""
        F = np.asarray(F, dtype=float)
        q = float(np.sum(F * F))
        if self.lambda_L:
            q += self.lambda_L * laplacian_quadratic(self.lap, F)
        return q

    def toarray(self) -> np.ndarray:
        return self.lambda_L * self.lap.toarray() + np.eye(self.n)


# --------------------------------------------------------------------------
# constructions
# --------------------------------------------------------------------------

def empty_graph(n: int) -> sp.csr_matrix:
    return sp.csr_matrix((n, n))


def chain_graph(n: int) -> sp.csr_matrix:
    """Unit-weight path on ``n`` nodes."""
    if n < 2:
        raise ValueError("a chain graph needs at least 2 nodes")
    i = np.arange(n - 1)
    W = sp.coo_matrix((np.ones(n - 1), (i, i + 1)), shape=(n, n))
    return sp.csr_matrix(W + W.T)


def community_labels(n: int, communities: int) -> np.ndarray:
    """Contiguous, balanced community assignment (sizes differ by at most 1)."""
    return (np.arange(n) * communities) // n


def community_graph(n: int, communities: int, p_in: float, p_out: float, seed=None) -> sp.csr_matrix:
    """Unit-weight stochastic block model with balanced communities."""
    if communities < 1 or communities > n:
        raise ValueError("need 1 <= communities <= n")
    if not 0 <= p_out <= p_in <= 1:
        raise ValueError("need 0 <= p_out <= p_in <= 1")
    rng = np.random.default_rng(seed)
    labels = community_labels(n, communities)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(iu.shape[0]) < prob
    W = sp.coo_matrix((np.ones(keep.sum()), (iu[keep], ju[keep])), shape=(n, n))
    return sp.csr_matrix(W + W.T)


def pairwise_distances(M, distance="sqeuclidean") -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ValueError("rows must be finite")
    return cdist(M, M, metric=distance)


def default_eps(M, distance="sqeuclidean") -> float:
    """``eps`` with ``eps^2`` equal to the median nonzero pairwise distance."""
    Z = pdist(np.asarray(M, dtype=float), metric=distance)
    Z = Z[Z > 0]
    if Z.size == 0:
        return 1.0
    return float(np.sqrt(np.median(Z)))


def sigma_for_density(M, eps, density, distance="sqeuclidean") -> float:
    """Smallest threshold whose graph has ``nnz(W) / m^2 <= density``."""
    m = np.asarray(M).shape[0]
    w = np.exp(-pdist(np.asarray(M, dtype=float), metric=distance) / eps**2)
    w = np.sort(w[w > 0])[::-1]
    max_pairs = int(np.floor(density * m * m / 2))
    if max_pairs >= w.size:
        return float(w[-1]) if w.size else 1.0
    return float(min(np.nextafter(w[max_pairs], np.inf), 1.0))


def epsilon_graph(M, eps=None, sigma=None, *, density=0.05, distance="sqeuclidean") -> sp.csr_matrix:
    """Thresholded Gaussian kernel graph between the rows of ``M``.

    ``W_ij = exp(-Z_ij / eps^2)`` if that value is at least ``sigma``, else 0,
    with ``Z`` the pairwise row distance.  ``eps`` defaults to the square root
    of the median nonzero distance and ``sigma`` to the smallest threshold
    reaching edge ``density``.
    """
    Z = pairwise_distances(M, distance)
    if eps is None:
        eps = default_eps(M, distance)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if sigma is None:
        sigma = sigma_for_density(M, eps, density, distance)
    if not 0 < sigma <= 1:
        raise ValueError("sigma must lie in (0, 1]")
    K = np.exp(-Z / eps**2)
    K[K < sigma] = 0.0
    np.fill_diagonal(K, 0.0)
    K = np.maximum(K, K.T)
    return sp.csr_matrix(K)


def inverse_distance_graph(F, delta=INV_DIST_DELTA) -> sp.csr_matrix:
    """Dense graph with weights ``1 / (||f_i - f_j|| + delta)``."""
    D = pairwise_distances(F, "euclidean")
    W = 1.0 / (D + delta)
    np.fill_diagonal(W, 0.0)
    W = np.maximum(W, W.T)
    return sp.csr_matrix(W)


def edge_density(W) -> float:
    W = sp.csr_matrix(W)
    return W.nnz / float(W.shape[0]) ** 2


def truncated_factorization(M, r: int):
    """Rank-``r`` truncated SVD ``(U, S, V)`` with ``M ~ U diag(S) V^T``.

    Dense LAPACK for small matrices, ARPACK (``svds``) otherwise.  Singular
    values are returned in descending order.
    """
    M = np.asarray(M, dtype=float) if not sp.issparse(M) else M
    m, n = M.shape
    if not 1 <= r <= min(m, n):
        raise ValueError(f"rank {r} out of range for a {m}x{n} matrix")
    if min(m, n) <= 50 or r >= min(m, n) - 1:
        dense = M.toarray() if sp.issparse(M) else M
        U, S, Vt = np.linalg.svd(dense, full_matrices=False)
        return U[:, :r], S[:r], Vt[:r].T
    U, S, Vt = spla.svds(M, k=r, random_state=0)
    order = np.argsort(S)[::-1]
    return U[:, order], S[order], Vt[order].T


def low_rank_features(M, r: int = 10) -> np.ndarray:
    """Rank-``r`` approximation ``U S V^T`` of a zero-filled matrix."""
    U, S, V = truncated_factorization(M, min(r, min(M.shape)))
    return (U * S) @ V.T

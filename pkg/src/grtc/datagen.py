"""Synthetic graph-structured tensors and observation sampling."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .graph import community_graph, laplacian_from_adjacency
from .tensor_core import CPFactors, SparseObservations, check_shape

PINV_CUTOFF = 1e-8


@dataclass
class SyntheticSpec:
    """Ground-truth model ``[[A~ U1, U2, ..., Uk]] + noise``.

    ``adjacency`` is the mode-1 graph; when omitted a community graph is drawn
    from ``communities``, ``p_in`` and ``p_out``.
    """

    shape: tuple = (100, 30, 30)
    rank: int = 5
    snr_db: float = 20.0
    seed: int = 0
    adjacency: Optional[sp.spmatrix] = None
    communities: int = 5
    p_in: float = 0.5
    p_out: float = 0.01

    def __post_init__(self):
        self.shape = check_shape(self.shape)
        if self.rank < 1:
            raise ValueError("rank must be positive")
        if math.isnan(self.snr_db):
            raise ValueError("SNR must not be NaN")


@dataclass
class SyntheticTensor:
    tensor: np.ndarray        # signal + noise
    signal: np.ndarray
    factors: CPFactors        # factors of the signal (first one already filtered)
    adjacency: sp.csr_matrix  # mode-1 graph
    laplacian: sp.csr_matrix
    noise_sigma: float

    @property
    def noise(self) -> np.ndarray:
        return self.tensor - self.signal

    def empirical_snr_db(self) -> float:
        e = np.sum(self.noise**2)
        return math.inf if e == 0 else 10 * math.log10(np.sum(self.signal**2) / e)


def graph_filter(lap, cutoff=PINV_CUTOFF) -> np.ndarray:
    """``V pinv(Lambda)`` from the eigendecomposition ``lap = V Lambda V^T``.

    Eigenvalues at or below ``cutoff`` (the constant vectors of each connected
    component) map to 0.
    """
    lap = lap.toarray() if sp.issparse(lap) else np.asarray(lap, dtype=float)
    evals, evecs = np.linalg.eigh(lap)
    inv = np.zeros_like(evals)
    keep = evals > cutoff
    inv[keep] = 1.0 / evals[keep]
    return evecs * inv


def noise_sigma(signal, snr_db: float) -> float:
    """Noise std giving ``10 log10(||signal||^2 / E||noise||^2) = snr_db``."""
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    N = np.size(signal)
    return float(np.linalg.norm(signal) / (math.sqrt(N) * 10 ** (snr_db / 20)))


def synth_graph_tensor(spec: SyntheticSpec) -> SyntheticTensor:
    rng = np.random.default_rng(spec.seed)
    graph_seed, factor_seed, noise_seed = rng.integers(0, 2**63 - 1, size=3)
    m1 = spec.shape[0]
    W = spec.adjacency
    if W is None:
        W = community_graph(m1, spec.communities, spec.p_in, spec.p_out, seed=int(graph_seed))
    W = sp.csr_matrix(W)
    if W.shape != (m1, m1):
        raise ValueError(f"graph has {W.shape[0]} nodes but mode 1 has size {m1}")
    lap = laplacian_from_adjacency(W)
    frng = np.random.default_rng(factor_seed)
    raw = [frng.standard_normal((m, spec.rank)) for m in spec.shape]
    raw[0] = graph_filter(lap) @ raw[0]
    factors = CPFactors(raw)
    signal = factors.full()
    sigma = noise_sigma(signal, spec.snr_db)
    noise = sigma * np.random.default_rng(noise_seed).standard_normal(spec.shape) if sigma else 0.0
    return SyntheticTensor(signal + noise, signal, factors, W, lap, sigma)


@dataclass
class SamplingSpec:
    """Uniform sampling of ``ceil(rate * N)`` entries split into train/test."""

    rate: float
    seed: int = 0
    train_fraction: float = 0.8

    def __post_init__(self):
        if not 0 < self.rate <= 1:
            raise ValueError("sampling rate must lie in (0, 1]")
        if not 0 <= self.train_fraction <= 1:
            raise ValueError("train_fraction must lie in [0, 1]")


def sample_omega(shape, spec: SamplingSpec):
    """Disjoint train and test index arrays of shape ``(n, k)``, 0-based."""
    shape = check_shape(shape)
    N = int(np.prod(shape))
    if spec.rate * N < 1 - 1e-9:
        raise ValueError(f"sampling rate {spec.rate} selects fewer than one of {N} entries")
    n = math.ceil(spec.rate * N - 1e-9)
    rng = np.random.default_rng(spec.seed)
    lin = rng.choice(N, size=n, replace=False)
    n_train = int(round(spec.train_fraction * n))
    train = np.sort(lin[:n_train])
    test = np.sort(lin[n_train:])
    to_idx = lambda a: np.stack(np.unravel_index(a, shape), axis=1).astype(np.int64)
    return to_idx(train), to_idx(test)


def observe(T: np.ndarray, spec: SamplingSpec):
    """Sample ``T`` and return ``(train, test)`` observations."""
    tr, te = sample_omega(T.shape, spec)
    return (
        SparseObservations(T.shape, tr, T[tuple(tr.T)]),
        SparseObservations(T.shape, te, T[tuple(te.T)]),
    )


def kfold_split(n: int, K: int, seed=0) -> list:
    """Random partition of ``range(n)`` into ``K`` folds with sizes differing by at most 1."""
    if K < 2:
        raise ValueError("need at least 2 folds")
    if n < K:
        raise ValueError(f"cannot split {n} entries into {K} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, K)]


__all__ = [
    "SyntheticSpec",
    "SyntheticTensor",
    "SamplingSpec",
    "graph_filter",
    "noise_sigma",
    "synth_graph_tensor",
    "sample_omega",
    "observe",
    "kfold_split",
]

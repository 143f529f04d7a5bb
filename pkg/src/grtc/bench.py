"""Timing of the matrix-free Hessian-vector product.

Measures how ``M^(i) x`` scales with ``|Omega|`` and ``nnz(L)`` and compares
the numba and numpy kernel backends on the same operator.
"""
from __future__ import annotations

import time

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .graph import ShiftedLaplacian, laplacian_from_adjacency
from .subproblem import SubproblemOperator
from .tensor_core import CPFactors, SparseObservations

BENCH_COLUMNS = ("case", "backend", "nnz_omega", "nnz_lap", "rank", "median_s", "min_s", "repeats")


def random_graph(n: int, edges: int, seed=None) -> sp.csr_matrix:
    """Unit-weight graph with ``edges`` distinct undirected edges drawn uniformly."""
    total = n * (n - 1) // 2
    if edges > total:
        raise ValueError(f"at most {total} edges on {n} nodes")
    rng = np.random.default_rng(seed)
    pick = rng.choice(total, size=edges, replace=False)
    iu, ju = np.triu_indices(n, k=1)
    W = sp.coo_matrix((np.ones(edges), (iu[pick], ju[pick])), shape=(n, n))
    return sp.csr_matrix(W + W.T)


def random_observations(shape, nnz: int, seed=None) -> SparseObservations:
    rng = np.random.default_rng(seed)
    lin = rng.choice(int(np.prod(shape)), size=nnz, replace=False)
    return SparseObservations.from_linear(shape, lin, rng.standard_normal(nnz))


def time_call(fn, repeats: int):
    fn()  # warm-up (JIT compilation, caches)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times)), float(np.min(times))


def hvp_timing(shape, rank, nnz, lap_edges, repeats=15, seed=0, backend=None, mode=0, obs=None):
    """Median and min wall time of one ``apply`` of ``M^(mode)``."""
    obs = obs if obs is not None else random_observations(shape, nnz, seed)
    rng = np.random.default_rng([seed, 1])
    factors = CPFactors.random(shape, rank, rng)
    L = ShiftedLaplacian(laplacian_from_adjacency(random_graph(shape[mode], lap_edges, seed=[seed, 2])), 1.0)
    op = SubproblemOperator(obs, factors, mode, L, [0.1] * len(shape))
    x = rng.standard_normal(op.size)
    previous = _kernels.set_backend(backend) if backend else None
    try:
        med, best = time_call(lambda: op.apply(x), repeats)
    finally:
        if previous is not None:
            _kernels.set_backend(previous)
    return {"nnz_omega": obs.nnz, "nnz_lap": L.nnz, "rank": rank, "median_s": med, "min_s": best,
            "repeats": repeats}


def scaling_benchmark(shape=(200, 100, 100), rank=10, nnz=100_000, lap_edges=2_000, repeats=15, seed=0,
                      backends=("numba", "numpy")):
    """Rows for the base case, doubled ``|Omega|`` and doubled ``nnz(L)``, per backend."""
    rows = []
    cases = [("base", nnz, lap_edges), ("double_omega", 2 * nnz, lap_edges), ("double_lap", nnz, 2 * lap_edges)]
    for backend in backends:
        if backend == "numba" and not _kernels.HAS_NUMBA:
            continue
        for name, n_obs, n_edges in cases:
            r = hvp_timing(shape, rank, n_obs, n_edges, repeats=repeats, seed=seed, backend=backend)
            rows.append({"case": name, "backend": backend, **r})
    return rows


def scaling_ratios(rows, backend):
    by_case = {r["case"]: r["median_s"] for r in rows if r["backend"] == backend}
    return {
        "omega": by_case["double_omega"] / by_case["base"],
        "lap": by_case["double_lap"] / by_case["base"],
    }

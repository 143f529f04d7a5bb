"""Compare the numba and numpy kernel backends on the Hessian-vector product.

Usage::

    python3 benchmarks/bench_backends.py [--shape 200 100 100] [--rank 10] [--nnz 100000]

Prints one line per (case, backend) with median/min time, then the numba
speedup and the |Omega| / nnz(L) scaling ratios of each backend.  Both
backends are checked to produce the same product before timing.
"""
import argparse

import numpy as np

from grtc import _kernels
from grtc.bench import random_observations, scaling_benchmark, scaling_ratios
from grtc.graph import ShiftedLaplacian, laplacian_from_adjacency
from grtc.bench import random_graph
from grtc.subproblem import SubproblemOperator
from grtc.tensor_core import CPFactors


def check_agreement(shape, rank, nnz, edges, seed=0):
    obs = random_observations(shape, nnz, seed)
    F = CPFactors.random(shape, rank, np.random.default_rng(seed))
    L = ShiftedLaplacian(laplacian_from_adjacency(random_graph(shape[0], edges, seed)), 1.0)
    op = SubproblemOperator(obs, F, 0, L, [0.1] * len(shape))
    x = np.random.default_rng(seed + 1).standard_normal(op.size)
    out = {}
    for b in ("numba", "numpy"):
        prev = _kernels.set_backend(b)
        out[b] = op.apply(x)
        _kernels.set_backend(prev)
    return float(np.linalg.norm(out["numba"] - out["numpy"]) / np.linalg.norm(out["numpy"]))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--shape", type=int, nargs="+", default=[200, 100, 100])
    p.add_argument("--rank", type=int, default=10)
    p.add_argument("--nnz", type=int, default=100_000)
    p.add_argument("--lap-edges", type=int, default=2_000)
    p.add_argument("--repeats", type=int, default=15)
    a = p.parse_args()
    shape = tuple(a.shape)

    if _kernels.HAS_NUMBA:
        print(f"backend agreement (relative diff): {check_agreement(shape, a.rank, a.nnz, a.lap_edges):.2e}")
    rows = scaling_benchmark(shape, a.rank, a.nnz, a.lap_edges, a.repeats)
    for r in rows:
        print(f"{r['case']:<13} {r['backend']:<6} |Omega|={r['nnz_omega']:<8} nnz(L)={r['nnz_lap']:<7}"
              f" median={r['median_s'] * 1e3:8.3f} ms  min={r['min_s'] * 1e3:8.3f} ms")
    backends = sorted({r["backend"] for r in rows})
    for b in backends:
        s = scaling_ratios(rows, b)
        print(f"{b}: x2 |Omega| -> {s['omega']:.2f}x   x2 nnz(L) -> {s['lap']:.2f}x")
    if len(backends) == 2:
        base = {r["backend"]: r["median_s"] for r in rows if r["case"] == "base"}
        print(f"numba speedup on base case: {base['numpy'] / base['numba']:.2f}x")


if __name__ == "__main__":
    main()

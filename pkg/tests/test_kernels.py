import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grtc import _kernels

needs_numba = pytest.mark.skipif(not _kernels.HAS_NUMBA, reason="numba not installed")


@pytest.fixture
def backend():
    prev = _kernels.get_backend()
    yield _kernels.set_backend
    _kernels.set_backend(prev)


def grouped(rng, m, R, max_per_row=5):
    counts = rng.integers(0, max_per_row + 1, size=m)
    indptr = np.zeros(m + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    D = rng.standard_normal((indptr[-1], R))
    return indptr, D


def reference(indptr, D, X, w):
    m, R = X.shape
    A = np.zeros((m, R))
    Q = np.zeros((m, R))
    G = np.zeros((m, R, R))
    for j in range(m):
        Dj = D[indptr[j]:indptr[j + 1]]
        G[j] = Dj.T @ Dj
        A[j] = G[j] @ X[j]
        Q[j] = Dj.T @ w[indptr[j]:indptr[j + 1]]
    return A, Q, G


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_backends_match_reference(m, R, seed):
    rng = np.random.default_rng(seed)
    indptr, D = grouped(rng, m, R)
    X = rng.standard_normal((m, R))
    w = rng.standard_normal(D.shape[0])
    A, Q, G = reference(indptr, D, X, w)
    prev = _kernels.get_backend()
    try:
        for b in _kernels.BACKENDS:
            if b == "numba" and not _kernels.HAS_NUMBA:
                continue
            _kernels.set_backend(b)
            np.testing.assert_allclose(_kernels.apply_gram(indptr, D, X), A, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(_kernels.weighted_rows(indptr, D, w), Q, rtol=1e-12, atol=1e-12)
            np.testing.assert_allclose(_kernels.gram_blocks(indptr, D), G, rtol=1e-12, atol=1e-12)
    finally:
        _kernels.set_backend(prev)


def test_empty_observations(backend):
    indptr = np.zeros(4, dtype=np.int64)
    D = np.zeros((0, 2))
    for b in _kernels.BACKENDS:
        if b == "numba" and not _kernels.HAS_NUMBA:
            continue
        backend(b)
        assert np.all(_kernels.apply_gram(indptr, D, np.ones((3, 2))) == 0)
        assert _kernels.gram_blocks(indptr, D).shape == (3, 2, 2)


def test_set_backend_validation(backend):
    with pytest.raises(ValueError):
        backend("fortran")
    prev = backend("numpy")
    assert _kernels.get_backend() == "numpy"
    assert prev in _kernels.BACKENDS


@needs_numba
def test_solver_results_agree_across_backends(backend):
    from grtc.solvers import StoppingRule, altmin_cg
    from grtc.tensor_core import CPFactors, SparseObservations

    rng = np.random.default_rng(0)
    shape = (9, 7, 6)
    obs = SparseObservations.from_dense(rng.standard_normal(shape), rng.random(shape) < 0.4)
    init = CPFactors.random(shape, 3, rng)
    out = {}
    for b in ("numba", "numpy"):
        backend(b)
        _, rep = altmin_cg(obs, init, None, 0.1, stop=StoppingRule(0.0, max_outer_iters=5))
        out[b] = rep.objectives
    np.testing.assert_allclose(out["numba"], out["numpy"], rtol=1e-10)


@pytest.mark.parametrize("env, expected", [({"GRTC_BACKEND": "numpy"}, "numpy"), ({"GRTC_THREADS": "1"}, None)])
def test_environment_flags(env, expected):
    code = "from grtc import _kernels; print(_kernels.get_backend())"
    out = subprocess.run([sys.executable, "-c", code], env={**os.environ, **env}, capture_output=True, text=True,
                         check=True).stdout.strip()
    if expected:
        assert out == expected
    else:
        assert out in _kernels.BACKENDS


def test_bad_backend_env_fails():
    code = "import grtc"
    res = subprocess.run([sys.executable, "-c", code], env={**os.environ, "GRTC_BACKEND": "cuda"},
                         capture_output=True, text=True)
    assert res.returncode != 0 and "GRTC_BACKEND" in res.stderr

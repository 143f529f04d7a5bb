"""Hot loops over observed entries, grouped by the row of a mode unfolding.

Every kernel takes the observations of one mode sorted by row, described by
``indptr`` (CSR-style row pointers, length ``m + 1``) and the matching rows
``D`` of the Khatri-Rao product (one row per observation, same order).

Two interchangeable implementations exist: numba ``@njit`` loops and a pure
numpy path.  The backend is picked at import time from ``GRTC_BACKEND``
(``numba`` or ``numpy``); numba is the default when it imports cleanly.
Per-row sums are accumulated in a fixed order in both paths, so results are
deterministic for a given backend.
"""
import os

import numpy as np

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

BACKENDS = ("numba", "numpy")


def _initial_backend():
    requested = os.environ.get("GRTC_BACKEND", "").strip().lower()
    if requested == "numpy" or not HAS_NUMBA:
        return "numpy"
    if requested not in ("", "numba"):
        raise ValueError(f"GRTC_BACKEND must be one of {BACKENDS}, got {requested!r}")
    return "numba"


_backend = _initial_backend()

if HAS_NUMBA and os.environ.get("GRTC_THREADS"):
    numba.set_num_threads(max(1, min(int(os.environ["GRTC_THREADS"]), numba.config.NUMBA_NUM_THREADS)))


def get_backend():
    return _backend


def set_backend(name):
    """Switch kernel backend at runtime. Returns the previous backend name."""
    global _backend
    if name not in BACKENDS:
        raise ValueError(f"unknown backend {name!r}; expected one of {BACKENDS}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    previous, _backend = _backend, name
    return previous


# --------------------------------------------------------------------------
# numpy path
# --------------------------------------------------------------------------

def _segment_sum(values, indptr):
    m = indptr.shape[0] - 1
    out = np.zeros((m,) + values.shape[1:], dtype=np.float64)
    counts = np.diff(indptr)
    nonempty = counts > 0
    if values.shape[0]:
        out[nonempty] = np.add.reduceat(values, indptr[:-1][nonempty], axis=0)
    return out


def _np_apply_gram(indptr, D, X):
    rows = np.repeat(np.arange(X.shape[0]), np.diff(indptr))
    s = np.einsum("pr,pr->p", D, X[rows])
    return _segment_sum(s[:, None] * D, indptr)


def _np_weighted_rows(indptr, D, w):
    return _segment_sum(w[:, None] * D, indptr)


def _np_gram_blocks(indptr, D):
    return _segment_sum(np.einsum("pr,ps->prs", D, D), indptr)


# --------------------------------------------------------------------------
# numba path
# --------------------------------------------------------------------------

if HAS_NUMBA:

    @numba.njit(cache=True)
    def _nb_apply_gram(indptr, D, X):
        m, R = X.shape
        out = np.zeros((m, R))
        for j in range(m):
            for p in range(indptr[j], indptr[j + 1]):
                s = 0.0
                for r in range(R):
                    s += D[p, r] * X[j, r]
                for r in range(R):
                    out[j, r] += s * D[p, r]
        return out

    @numba.njit(cache=True)
    def _nb_weighted_rows(indptr, D, w):
        m = indptr.shape[0] - 1
        R = D.shape[1]
        out = np.zeros((m, R))
        for j in range(m):
            for p in range(indptr[j], indptr[j + 1]):
                for r in range(R):
                    out[j, r] += w[p] * D[p, r]
        return out

    @numba.njit(cache=True)
    def _nb_gram_blocks(indptr, D):
        m = indptr.shape[0] - 1
        R = D.shape[1]
        out = np.zeros((m, R, R))
        for j in range(m):
            for p in range(indptr[j], indptr[j + 1]):
                for a in range(R):
                    da = D[p, a]
                    for b in range(R):
                        out[j, a, b] += da * D[p, b]
        return out


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

def apply_gram(indptr, D, X):
    """Row ``j`` of the result is ``sum_{p in row j} (D[p] . X[j]) D[p]``."""
    if _backend == "numba":
        return _nb_apply_gram(indptr, D, X)
    return _np_apply_gram(indptr, D, X)


def weighted_rows(indptr, D, w):
    """Row ``j`` of the result is ``sum_{p in row j} w[p] D[p]``."""
    if _backend == "numba":
        return _nb_weighted_rows(indptr, D, w)
    return _np_weighted_rows(indptr, D, w)


def gram_blocks(indptr, D):
    """Stack of per-row Gram matrices ``sum_{p in row j} D[p]^T D[p]``."""
    if _backend == "numba":
        return _nb_gram_blocks(indptr, D)
    return _np_gram_blocks(indptr, D)

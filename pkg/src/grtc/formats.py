"""Text file formats: sparse tensors (.tns), graph edge lists, rating triples.

All indices in files are 1-based; everything returned is 0-based.
"""
from __future__ import annotations

import io
import os
import tempfile
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import check_adjacency
from .tensor_core import CPFactors, SparseObservations, check_shape


class DataFormatError(ValueError):
    """Malformed or out-of-range content in an input file."""


def atomic_write(path, data, mode="w"):
    """Write to a temporary file in the target directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({"newline": "\n"} if "b" not in mode else {})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v: float) -> str:
    return repr(float(v))


# --------------------------------------------------------------------------
# .tns
# --------------------------------------------------------------------------

def format_tns(obs: SparseObservations, header=True) -> str:
    lines = []
    if header:
        lines.append("# shape " + " ".join(str(m) for m in obs.shape))
    for idx, v in zip(obs.indices + 1, obs.values):
        lines.append(" ".join(str(int(i)) for i in idx) + " " + _fmt(v))
    return "\n".join(lines) + ("\n" if lines else "")


def write_tns(path, obs: SparseObservations, header=True):
    atomic_write(path, format_tns(obs, header))


def read_tns(path, shape=None) -> SparseObservations:
    """Parse a FROSTT-style file; the shape comes from the header, ``shape`` or the max index."""
    file_shape = None
    rows, vals = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                parts = s[1:].split()
                if parts and parts[0] == "shape":
                    try:
                        file_shape = tuple(int(p) for p in parts[1:])
                    except ValueError as exc:
                        raise DataFormatError(f"{path}:{lineno}: bad shape header") from exc
                continue
            parts = s.split()
            try:
                idx = [int(p) for p in parts[:-1]]
                val = float(parts[-1])
            except (ValueError, IndexError) as exc:
                raise DataFormatError(f"{path}:{lineno}: malformed entry {s!r}") from exc
            if len(idx) < 2:
                raise DataFormatError(f"{path}:{lineno}: need at least 2 indices")
            if rows and len(idx) != len(rows[0]):
                raise DataFormatError(f"{path}:{lineno}: expected {len(rows[0])} indices, got {len(idx)}")
            if min(idx) < 1:
                raise DataFormatError(f"{path}:{lineno}: indices are 1-based")
            rows.append(idx)
            vals.append(val)
    if shape is None:
        shape = file_shape
    elif file_shape is not None and tuple(shape) != file_shape:
        raise DataFormatError(f"{path}: header shape {file_shape} differs from requested {tuple(shape)}")
    if shape is None and not rows:
        raise DataFormatError(f"{path}: empty file without a shape header")
    k = len(rows[0]) if rows else len(shape)
    idx = np.array(rows, dtype=np.int64).reshape(len(rows), k) - 1
    if shape is None:
        shape = tuple(int(v) + 1 for v in idx.max(axis=0))
    shape = check_shape(shape)
    if idx.size and idx.shape[1] != len(shape):
        raise DataFormatError(f"{path}: entries have {idx.shape[1]} indices, shape has {len(shape)} modes")
    if idx.size and (idx >= np.array(shape)).any():
        bad = np.nonzero((idx >= np.array(shape)).any(axis=1))[0][0]
        raise DataFormatError(f"{path}: entry {bad + 1} index {tuple(idx[bad] + 1)} exceeds shape {shape}")
    try:
        return SparseObservations(shape, idx.reshape(-1, len(shape)), vals)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


load_tns = read_tns


# --------------------------------------------------------------------------
# graphs
# --------------------------------------------------------------------------

def format_graph(W) -> str:
    W = check_adjacency(W)
    U = sp.triu(W, k=1).tocoo()
    order = np.lexsort((U.col, U.row))
    lines = [f"# nodes {W.shape[0]}"]
    lines += [f"{i + 1} {j + 1} {_fmt(w)}" for i, j, w in zip(U.row[order], U.col[order], U.data[order])]
    return "\n".join(lines) + "\n"


def write_graph(path, W):
    atomic_write(path, format_graph(W))


def read_graph(path, n=None) -> sp.csr_matrix:
    """Load an undirected edge list into a symmetric adjacency matrix."""
    header_n = None
    I, J, V = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                parts = s[1:].split()
                if len(parts) == 2 and parts[0] == "nodes":
                    header_n = int(parts[1])
                continue
            parts = s.split()
            if len(parts) != 3:
                raise DataFormatError(f"{path}:{lineno}: expected 'i j w'")
            try:
                i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: malformed edge {s!r}") from exc
            if i < 1 or j < 1 or i == j:
                raise DataFormatError(f"{path}:{lineno}: invalid edge ({i}, {j})")
            if w < 0 or not np.isfinite(w):
                raise DataFormatError(f"{path}:{lineno}: weight must be finite and non-negative")
            I.append(i - 1)
            J.append(j - 1)
            V.append(w)
    n = n if n is not None else header_n
    if n is None:
        n = max(max(I, default=-1), max(J, default=-1)) + 1
    if (I and max(I) >= n) or (J and max(J) >= n):
        raise DataFormatError(f"{path}: node index exceeds node count {n}")
    W = sp.coo_matrix((V, (I, J)), shape=(n, n)).tocsr()
    if (W.multiply(W.T)).nnz:
        raise DataFormatError(f"{path}: edge listed in both directions")
    W = W + W.T
    if W.nnz != 2 * len(V):
        raise DataFormatError(f"{path}: duplicate edges")
    return check_adjacency(W)


# --------------------------------------------------------------------------
# rating triples
# --------------------------------------------------------------------------

def time_bin_edges(t_min: float, t_max: float, bins: int) -> np.ndarray:
    return t_min + np.arange(bins + 1) * ((t_max - t_min) / bins)


def read_triples(path, shape=None, time_bins: int = 7) -> SparseObservations:
    """Bin ``user item timestamp rating`` lines into a users x items x bins tensor.

    Bins have equal width over ``[min_ts, max_ts]``.  When several ratings fall
    into the same cell, the one with the latest timestamp is kept.
    """
    if time_bins < 1:
        raise ValueError("time_bins must be positive")
    data = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s or s.startswith("#"):
                continue
            parts = s.split()
            if len(parts) != 4:
                raise DataFormatError(f"{path}:{lineno}: expected 'user item timestamp rating'")
            try:
                u, i, ts, r = int(parts[0]), int(parts[1]), float(parts[2]), float(parts[3])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: malformed line {s!r}") from exc
            if u < 1 or i < 1:
                raise DataFormatError(f"{path}:{lineno}: ids are 1-based")
            if shape is not None and (u > shape[0] or i > shape[1]):
                raise DataFormatError(f"{path}:{lineno}: id ({u}, {i}) outside shape {tuple(shape[:2])}")
            data.append((u - 1, i - 1, ts, r, lineno))
    if not data:
        raise DataFormatError(f"{path}: no ratings")
    arr = np.array([d[:4] for d in data], dtype=float)
    users, items, ts, ratings = arr[:, 0].astype(np.int64), arr[:, 1].astype(np.int64), arr[:, 2], arr[:, 3]
    t_min, t_max = ts.min(), ts.max()
    if t_max > t_min:
        width = (t_max - t_min) / time_bins
        b = np.minimum(np.floor((ts - t_min) / width).astype(np.int64), time_bins - 1)
    else:
        b = np.zeros(ts.shape[0], dtype=np.int64)
    if shape is None:
        shape = (int(users.max()) + 1, int(items.max()) + 1)
    shape = (int(shape[0]), int(shape[1]), time_bins)
    # keep the latest timestamp per cell; later lines win ties
    order = np.lexsort((np.arange(ts.shape[0]), ts))
    cells = {}
    for p in order:
        cells[(users[p], items[p], b[p])] = ratings[p]
    idx = np.array(list(cells.keys()), dtype=np.int64)
    return SparseObservations(shape, idx, list(cells.values()))


load_triples = read_triples


# --------------------------------------------------------------------------
# factors
# --------------------------------------------------------------------------

def write_factors(path, factors: CPFactors):
    buf = io.BytesIO()
    np.savez(buf, *factors.factors)
    atomic_write(path, buf.getvalue(), mode="wb")


def read_factors(path) -> CPFactors:
    try:
        with np.load(path) as z:
            return CPFactors([z[f"arr_{n}"] for n in range(len(z.files))])
    except FileNotFoundError:
        raise
    except (OSError, ValueError, KeyError) as exc:
        raise DataFormatError(f"{path}: not a factor archive ({exc})") from exc

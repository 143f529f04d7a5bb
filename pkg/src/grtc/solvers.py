"""Linear CG, alternating minimization (CG or exact inner solves) and ADMM."""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
import scipy.linalg

from .subproblem import (
    SubproblemOperator,
    normalize_lambdas,
    normalize_laplacians,
    objective_value,
)
from .tensor_core import CPFactors, SparseObservations, cp_values

EXACT_MAX_SIZE = 2000


class SolverError(RuntimeError):
    """An inner solve broke down (non-finite values or a non-SPD operator)."""


@dataclass
class CGConfig:
    rel_tol: float = 1e-8
    max_iters: int = 500

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("CG rel_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("CG max_iters must be at least 1")


@dataclass
class StoppingRule:
    """Outer-loop budget: change in training RE, wall time, iteration count."""

    delta_tol: float = 1e-6
    time_budget: float = math.inf
    max_outer_iters: int = 500

    def __post_init__(self):
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be at least 1")
        if self.time_budget <= 0:
            raise ValueError("time_budget must be positive")


@dataclass
class ADMMConfig:
    eta0: float = 1.0
    gamma: float = 1.05
    inner: CGConfig = field(default_factory=lambda: CGConfig(rel_tol=1e-10))
    # relative primal residual required, together with delta_tol, to stop
    primal_tol: float = 1e-4
    # ceiling for the growing penalty; an unbounded eta freezes U near B
    eta_max: float = math.inf

    def __post_init__(self):
        if not self.eta0 > 0:
            raise ValueError("eta0 must be positive")
        if self.gamma < 1:
            raise ValueError("gamma must be at least 1")
        if not self.eta_max >= self.eta0:
            raise ValueError("eta_max must be at least eta0")
        if isinstance(self.inner, dict):
            self.inner = CGConfig(**self.inner)


class CGResult(NamedTuple):
    x: np.ndarray
    iters: int
    residual: float


def linear_cg(apply: Callable[[np.ndarray], np.ndarray], rhs, x0=None, cfg: CGConfig | None = None) -> CGResult:
    """Conjugate gradients for ``M x = rhs`` with ``M`` symmetric positive definite.

    Stops once ``||r_t|| <= rel_tol * ||r_0||`` (residual relative to the
    starting point) or after ``max_iters`` operator applications.
    """
    cfg = cfg or CGConfig()
    rhs = np.asarray(rhs, dtype=float)
    x = np.zeros_like(rhs) if x0 is None else np.array(x0, dtype=float, copy=True)
    r = rhs - apply(x)
    rr = float(r @ r)
    if not math.isfinite(rr):
        raise SolverError("non-finite initial residual")
    stop = cfg.rel_tol * math.sqrt(rr)
    p = None
    it = 0
    while math.sqrt(rr) > stop and it < cfg.max_iters:
        p = r.copy() if p is None else r + (rr / rr_prev) * p
        v = apply(p)
        pv = float(p @ v)
        if not (math.isfinite(pv) and pv > 0):
            raise SolverError(f"CG breakdown at iteration {it}: p^T M p = {pv}")
        alpha = rr / pv
        x += alpha * p
        r -= alpha * v
        rr_prev, rr = rr, float(r @ r)
        if not math.isfinite(rr):
            raise SolverError(f"non-finite residual at iteration {it}")
        it += 1
    return CGResult(x, it, math.sqrt(rr))


# --------------------------------------------------------------------------
# reports
# --------------------------------------------------------------------------

TRACE_COLUMNS = ("iter", "time_s", "objective", "train_rmse", "test_rmse", "train_re", "test_re")


@dataclass
class IterationRecord:
    iter: int
    time_s: float
    objective: float
    train_re: float
    train_rmse: float
    test_re: Optional[float] = None
    test_rmse: Optional[float] = None
    delta: Optional[float] = None
    inner_iters: list = field(default_factory=list)
    primal_residual: Optional[float] = None


@dataclass
class SolverReport:
    solver: str
    records: list = field(default_factory=list)
    initial: Optional[IterationRecord] = None
    termination: str = ""
    total_time_s: float = 0.0

    @property
    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    @property
    def final(self) -> IterationRecord:
        return self.records[-1] if self.records else self.initial

    def to_dict(self) -> dict:
        total_inner = int(sum(sum(r.inner_iters) for r in self.records))
        return {
            "solver": self.solver,
            "initial": asdict(self.initial) if self.initial else None,
            "records": [asdict(r) for r in self.records],
            "summary": {
                "termination": self.termination,
                "outer_iters": len(self.records),
                "inner_iters": total_inner,
                "total_time_s": self.total_time_s,
                "final_objective": self.final.objective if self.final else None,
                "final_train_re": self.final.train_re if self.final else None,
                "final_test_re": self.final.test_re if self.final else None,
            },
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def trace_rows(self) -> list:
        rows = [self.initial] if self.initial else []
        return [[getattr(r, c) for c in TRACE_COLUMNS] for r in rows + self.records]


def relative_error_values(pred, truth) -> float:
    den = np.linalg.norm(truth)
    if den == 0:
        raise ValueError("relative error undefined for an all-zero reference")
    return float(np.linalg.norm(pred - truth) / den)


def _metrics(factors, obs: SparseObservations, test: Optional[SparseObservations]):
    pred = cp_values(factors, obs.indices)
    res = pred - obs.values
    out = {
        "train_re": float(np.linalg.norm(res) / obs.norm()) if obs.norm() > 0 else float(np.linalg.norm(res)),
        "train_rmse": float(np.sqrt(np.mean(res**2))) if obs.nnz else 0.0,
    }
    if test is not None and test.nnz:
        tres = cp_values(factors, test.indices) - test.values
        out["test_re"] = float(np.linalg.norm(tres) / test.norm()) if test.norm() > 0 else float(np.linalg.norm(tres))
        out["test_rmse"] = float(np.sqrt(np.mean(tres**2)))
    return out


class _OuterLoop:
    """Shared stopping logic and bookkeeping for the outer iterations."""

    def __init__(self, name, obs, laps, lam, stop, test, callback):
        self.obs, self.laps, self.lam = obs, laps, lam
        self.stop = stop or StoppingRule()
        self.test = test
        self.callback = callback
        self.report = SolverReport(name)
        self.t0 = time.perf_counter()

    def record(self, it, factors, inner_iters=(), primal=None, prev=None):
        m = _metrics(factors, self.obs, self.test)
        rec = IterationRecord(
            iter=it,
            time_s=time.perf_counter() - self.t0,
            objective=objective_value(factors, self.obs, self.laps, self.lam),
            inner_iters=list(inner_iters),
            primal_residual=primal,
            **m,
        )
        if prev is not None:
            rec.delta = abs(rec.train_re - prev.train_re)
        return rec

    def run(self, init: CPFactors, sweep, extra_ok=lambda: True):
        factors = init
        self.report.initial = self.record(0, factors)
        prev = self.report.initial
        reason = "max_iters"
        for t in range(1, self.stop.max_outer_iters + 1):
            factors, inner, primal = sweep(factors)
            rec = self.record(t, factors, inner, primal, prev)
            self.report.records.append(rec)
            if self.callback is not None:
                self.callback(rec, factors)
            prev = rec
            if rec.delta < self.stop.delta_tol and extra_ok():
                reason = "delta_tol"
                break
            if rec.time_s > self.stop.time_budget:
                reason = "time_budget"
                break
        self.report.termination = reason
        self.report.total_time_s = time.perf_counter() - self.t0
        return factors, self.report


def _setup(obs, init, laplacians, lambdas):
    init = init if isinstance(init, CPFactors) else CPFactors(init)
    init.check_shape(obs.shape)
    laps = normalize_laplacians(laplacians, obs.shape)
    lam = normalize_lambdas(lambdas, obs.order)
    return init.copy(), laps, lam


# --------------------------------------------------------------------------
# alternating minimization
# --------------------------------------------------------------------------

def altmin_cg(obs: SparseObservations, init, laplacians, lambdas, stop: StoppingRule | None = None,
              cg: CGConfig | None = None, test: SparseObservations | None = None, callback=None):
    """Cyclic block minimization with each block solved by matrix-free CG.

    Each mode's CG is warm-started at the current factor.  Returns the final
    factors and a :class:`SolverReport`.
    """
    factors, laps, lam = _setup(obs, init, laplacians, lambdas)
    cg = cg or CGConfig()

    def sweep(F):
        U = list(F.factors)
        iters = []
        for i in range(len(U)):
            op = SubproblemOperator(obs, U, i, laps[i], lam)
            Q = op.rhs_matrix()
            if op.ridge:
                Q += op.ridge * U[i]
            res = linear_cg(op.apply, Q.ravel(), U[i].ravel(), cg)
            U[i] = res.x.reshape(op.m, op.R)
            iters.append(res.iters)
        return CPFactors(U), iters, None

    return _OuterLoop("altmin-cg", obs, laps, lam, stop, test, callback).run(factors, sweep)


def altmin_exact(obs: SparseObservations, init, laplacians, lambdas, stop: StoppingRule | None = None,
                 test: SparseObservations | None = None, callback=None):
    """Reference block minimization with dense Cholesky subproblem solves."""
    factors, laps, lam = _setup(obs, init, laplacians, lambdas)
    for m in obs.shape:
        if m * factors.rank > EXACT_MAX_SIZE:
            raise ValueError(f"dense subproblem of size {m * factors.rank} exceeds {EXACT_MAX_SIZE}")

    def sweep(F):
        U = list(F.factors)
        for i in range(len(U)):
            op = SubproblemOperator(obs, U, i, laps[i], lam)
            Q = op.rhs_matrix()
            if op.ridge:
                Q += op.ridge * U[i]
            try:
                x = scipy.linalg.solve(op.to_dense(), Q.ravel(), assume_a="pos")
            except np.linalg.LinAlgError as exc:
                raise SolverError(f"dense subproblem for mode {i} is singular") from exc
            U[i] = x.reshape(op.m, op.R)
        return CPFactors(U), [1] * len(U), None

    return _OuterLoop("altmin-exact", obs, laps, lam, stop, test, callback).run(factors, sweep)


# --------------------------------------------------------------------------
# ADMM
# --------------------------------------------------------------------------

def admm(obs: SparseObservations, init, laplacians, lambdas, stop: StoppingRule | None = None,
         cfg: ADMMConfig | None = None, test: SparseObservations | None = None, callback=None,
         return_state=False):
    """ADMM on the split ``U^(i) = B^(i)`` with the graph term moved to ``B``.

    Per mode: the rows of ``U^(i)`` are updated from independent ``R x R``
    systems, ``B^(i)`` solves ``(eta I + lambda_i L) B = eta U - Y`` by CG and
    the multiplier takes a dual ascent step.  ``eta`` grows by ``gamma`` after
    each sweep.
    """
    factors, laps, lam = _setup(obs, init, laplacians, lambdas)
    cfg = cfg or ADMMConfig()
    state = {
        "B": [U.copy() for U in factors],
        "Y": [np.zeros_like(U) for U in factors],
        "eta": float(cfg.eta0),
        "primal": math.inf,
    }

    def sweep(F):
        U = list(F.factors)
        B, Y, eta = state["B"], state["Y"], state["eta"]
        iters, primal = [], 0.0
        for i in range(len(U)):
            op = SubproblemOperator(obs, U, i, laps[i], lam, ridge=0.0)
            A, rhs = op.row_systems(eta, B[i], Y[i])
            U[i] = np.linalg.solve(A, rhs[..., None])[..., 0]
            B[i], it = update_B(U[i], B[i], Y[i], laps[i], lam[i], eta, cfg.inner)
            Y[i] = update_Y(Y[i], B[i], U[i], eta)
            iters.append(it)
            nu = np.linalg.norm(U[i])
            primal = max(primal, np.linalg.norm(B[i] - U[i]) / (nu if nu > 0 else 1.0))
        state["eta"] = min(eta * cfg.gamma, cfg.eta_max)
        state["primal"] = primal
        return CPFactors(U), iters, float(primal)

    loop = _OuterLoop("admm", obs, laps, lam, stop, test, callback)
    out = loop.run(factors, sweep, extra_ok=lambda: state["primal"] <= cfg.primal_tol)
    if return_state:
        return out + (state,)
    return out


def update_B(U, B0, Y, laplacian, lam_i, eta, cg: CGConfig):
    """Solve ``(eta I + lam_i L) B = eta U - Y`` by CG from ``B0``."""
    m, R = U.shape

    def apply(b):
        X = b.reshape(m, R)
        out = eta * X
        if lam_i:
            out = out + lam_i * laplacian.apply(X)
        return out.ravel()

    res = linear_cg(apply, (eta * U - Y).ravel(), B0.ravel(), cg)
    return res.x.reshape(m, R), res.iters


def update_Y(Y, B, U, eta):
    return Y + eta * (B - U)


SOLVERS = {
    "altmin-cg": altmin_cg,
    "admm": admm,
    "altmin-exact": altmin_exact,
}


def solve(name, obs, init, laplacians, lambdas, *, stop=None, cg=None, admm_cfg=None, test=None, callback=None):
    """Dispatch by solver name (``altmin-cg``, ``admm`` or ``altmin-exact``)."""
    if name == "altmin-cg":
        return altmin_cg(obs, init, laplacians, lambdas, stop=stop, cg=cg, test=test, callback=callback)
    if name == "admm":
        return admm(obs, init, laplacians, lambdas, stop=stop, cfg=admm_cfg, test=test, callback=callback)
    if name == "altmin-exact":
        return altmin_exact(obs, init, laplacians, lambdas, stop=stop, test=test, callback=callback)
    raise ValueError(f"unknown solver {name!r}; expected one of {sorted(SOLVERS)}")

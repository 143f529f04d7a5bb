"""Error metrics, model variants, cross-validation and the experiment grid."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .datagen import SamplingSpec, SyntheticSpec, kfold_split, observe, synth_graph_tensor
from .formats import atomic_write
from .graph import ShiftedLaplacian
from .solvers import TRACE_COLUMNS, ADMMConfig, CGConfig, SolverError, StoppingRule, solve
from .tensor_core import CPFactors, SparseObservations, cp_values

VARIANTS = ("greg", "nuclreg", "unreg")
VARIANT_LABELS = {"greg": "GReg-TC", "nuclreg": "NuclReg-TC", "unreg": "unreg-TC"}


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

def relative_error(factors, truth: SparseObservations) -> float:
    """``||P(model - truth)||_F / ||P(truth)||_F`` on the truth's index set."""
    if truth.nnz == 0:
        raise ValueError("relative error needs a nonempty index set")
    den = truth.norm()
    if den == 0:
        raise ValueError("relative error undefined: reference has zero norm")
    return float(np.linalg.norm(cp_values(factors, truth.indices) - truth.values) / den)


def rmse(factors, truth: SparseObservations) -> float:
    if truth.nnz == 0:
        raise ValueError("RMSE needs a nonempty index set")
    res = cp_values(factors, truth.indices) - truth.values
    return float(np.linalg.norm(res) / math.sqrt(truth.nnz))


def aggregate_err(results) -> float:
    """Mean error over all (training instance, initial point) pairs."""
    a = np.asarray(results, dtype=float)
    if a.size == 0:
        raise ValueError("no results to aggregate")
    return float(a.sum() / a.size)


# --------------------------------------------------------------------------
# model variants
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ModelVariant:
    tag: str

    def __post_init__(self):
        if self.tag not in VARIANTS:
            raise ValueError(f"unknown model variant {self.tag!r}; expected one of {VARIANTS}")

    @property
    def label(self) -> str:
        return VARIANT_LABELS[self.tag]

    @property
    def uses_graph(self) -> bool:
        return self.tag == "greg"

    def check(self, lam: float, lambda_L: float):
        if self.tag == "greg" and not (lam > 0 and lambda_L > 0):
            raise ValueError("GReg-TC needs lambda > 0 and lambda_L > 0")
        if self.tag == "nuclreg" and not (lam > 0 and lambda_L == 0):
            raise ValueError("NuclReg-TC needs lambda > 0 and lambda_L = 0")
        if self.tag == "unreg" and (lam != 0 or lambda_L != 0):
            raise ValueError("unreg-TC needs lambda = lambda_L = 0")

    def laplacians(self, graphs, lambda_L: float, shape):
        """Shifted Laplacians per mode; modes without a graph get ``L = I``."""
        graphs = list(graphs) if graphs is not None else [None] * len(shape)
        if self.uses_graph and all(g is None for g in graphs):
            raise ValueError("GReg-TC needs at least one graph Laplacian")
        out = []
        for g, m in zip(graphs, shape):
            if g is None or not self.uses_graph:
                out.append(ShiftedLaplacian.identity(m))
            else:
                out.append(ShiftedLaplacian(sp.csr_matrix(g), lambda_L))
        return out


def as_variant(v) -> ModelVariant:
    if isinstance(v, ModelVariant):
        return v
    key = "".join(ch for ch in str(v).lower() if ch.isalnum())
    if key.endswith("tc") and key not in VARIANTS:
        key = key[:-2]
    return ModelVariant(key)


# --------------------------------------------------------------------------
# cross-validation
# --------------------------------------------------------------------------

@dataclass
class CVConfig:
    folds: int = 3
    n_samples: int = 20
    bounds: tuple = (1e-4, 1e1)
    # bounds for lambda_L; defaults to ``bounds``
    bounds_L: Optional[tuple] = None
    seed: int = 0
    # explicit value lists; when ``grid`` is set, candidates are its product with ``grid_L``
    grid: Optional[tuple] = None
    grid_L: Optional[tuple] = None
    # initial points per fold; validation RMSE is averaged over all of them
    restarts: int = 1

    def __post_init__(self):
        if self.folds < 2:
            raise ValueError("need at least 2 folds")
        if self.n_samples < 1:
            raise ValueError("need at least one candidate")
        if self.restarts < 1:
            raise ValueError("need at least one restart per fold")
        for lo, hi in [self.bounds] + ([self.bounds_L] if self.bounds_L else []):
            if not 0 < lo <= hi:
                raise ValueError("log-range bounds must be positive and ordered")
        for g in (self.grid, self.grid_L):
            if g is not None and (len(g) == 0 or min(g) <= 0):
                raise ValueError("grid values must be positive")


@dataclass
class CVResult:
    best: tuple
    table: list

    def to_dict(self):
        return {"best": {"lambda": self.best[0], "lambda_L": self.best[1]}, "table": self.table}


def draw_candidates(variant: ModelVariant, cfg: CVConfig) -> list:
    """Log-uniform ``(lambda, lambda_L)`` draws respecting the variant's constraints.

    With ``cfg.grid`` set, the grid (times ``cfg.grid_L`` for GReg) is used instead.
    """
    if variant.tag == "unreg":
        return [(0.0, 0.0)]
    if cfg.grid is not None:
        if not variant.uses_graph:
            return [(float(lam), 0.0) for lam in cfg.grid]
        return [(float(lam), float(lamL)) for lam in cfg.grid for lamL in (cfg.grid_L or cfg.grid)]
    rng = np.random.default_rng(cfg.seed)
    lo, hi = np.log10(cfg.bounds)
    loL, hiL = np.log10(cfg.bounds_L or cfg.bounds)
    out = []
    for _ in range(cfg.n_samples):
        lam = 10 ** rng.uniform(lo, hi)
        lamL = 10 ** rng.uniform(loL, hiL)
        out.append((float(lam), float(lamL) if variant.uses_graph else 0.0))
    return out


def cross_validate(obs: SparseObservations, graphs, cfg: CVConfig, solver="altmin-cg", variant="greg",
                   rank=5, candidates=None, stop=None, cg=None, admm_cfg=None):
    """K-fold selection of ``(lambda, lambda_L)`` by mean validation RMSE.

    Folds partition the given (training) entries.  Every candidate sees the
    same folds and initial points.  With ``cfg.restarts > 1`` each fold is fit
    from several initial points and the fold score is the mean over them, which
    matches how the experiment grid averages over initial points.  Ties go to
    the larger ``lambda_L``.
    """
    variant = as_variant(variant)
    if obs.nnz < cfg.folds:
        raise ValueError(f"{obs.nnz} training entries cannot form {cfg.folds} folds")
    candidates = list(candidates) if candidates is not None else draw_candidates(variant, cfg)
    for lam, lamL in candidates:
        variant.check(lam, lamL)
    folds = kfold_split(obs.nnz, cfg.folds, seed=cfg.seed)
    inits = [[CPFactors.random(obs.shape, rank, np.random.default_rng([cfg.seed, 7, f, j]))
              for j in range(cfg.restarts)] for f in range(cfg.folds)]
    table = []
    for lam, lamL in candidates:
        laps = variant.laplacians(graphs, lamL, obs.shape)
        scores = []
        for f, val_idx in enumerate(folds):
            keep = np.ones(obs.nnz, dtype=bool)
            keep[val_idx] = False
            train, val = obs.subset(keep), obs.subset(val_idx)
            fold_scores = []
            for init in inits[f]:
                try:
                    F, _ = solve(solver, train, init, laps, lam, stop=stop, cg=cg, admm_cfg=admm_cfg)
                    s = rmse(F, val)
                except SolverError:
                    s = math.inf
                fold_scores.append(s if math.isfinite(s) else math.inf)
            scores.append(float(np.mean(fold_scores)))
        table.append({"lambda": lam, "lambda_L": lamL, "fold_rmse": scores, "mean_rmse": float(np.mean(scores))})
    best = min(table, key=lambda r: (r["mean_rmse"], -r["lambda_L"]))
    return CVResult((best["lambda"], best["lambda_L"]), table)


# --------------------------------------------------------------------------
# experiment grid
# --------------------------------------------------------------------------

@dataclass
class ExperimentSpec:
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    rate: float = 0.05
    train_fraction: float = 0.8
    n_test: int = 5
    n_init: int = 10
    rank: Optional[int] = None
    variants: tuple = VARIANTS
    solvers: tuple = ("altmin-cg", "admm")
    # variant tag -> (lambda, lambda_L); variants missing here are cross-validated
    params: dict = field(default_factory=dict)
    cv: CVConfig = field(default_factory=CVConfig)
    cv_solver: str = "altmin-cg"
    stop: StoppingRule = field(default_factory=StoppingRule)
    cg: CGConfig = field(default_factory=CGConfig)
    admm: ADMMConfig = field(default_factory=ADMMConfig)
    seed: int = 0

    def __post_init__(self):
        if self.n_test < 1 or self.n_init < 1:
            raise ValueError("n_test and n_init must be positive")
        self.variants = tuple(as_variant(v).tag for v in self.variants)


@dataclass
class RunResult:
    variant: str
    solver: str
    trial: int
    init: int
    lam: float
    lambda_L: float
    train_re: float
    test_re: float
    train_rmse: float
    test_rmse: float
    outer_iters: int
    time_s: float
    termination: str
    trace: list = field(repr=False, default_factory=list)


@dataclass
class ExperimentReport:
    spec: dict
    params: dict
    runs: list
    cv: dict = field(default_factory=dict)

    def errors(self, solver, variant, metric="test_re") -> np.ndarray:
        """``n_test x n_init`` error matrix for one (solver, variant) cell."""
        rs = [r for r in self.runs if r.solver == solver and r.variant == variant]
        n_test = 1 + max(r.trial for r in rs)
        n_init = 1 + max(r.init for r in rs)
        E = np.full((n_test, n_init), np.nan)
        for r in rs:
            E[r.trial, r.init] = getattr(r, metric)
        return E

    def table(self, metric="test_re") -> dict:
        cells = sorted({(r.solver, r.variant) for r in self.runs})
        out = {}
        for s, v in cells:
            out.setdefault(s, {})[v] = aggregate_err(self.errors(s, v, metric))
        return out

    def per_trial(self, metric="test_re") -> dict:
        cells = sorted({(r.solver, r.variant) for r in self.runs})
        out = {}
        for s, v in cells:
            out.setdefault(s, {})[v] = self.errors(s, v, metric).mean(axis=1).tolist()
        return out

    def summary(self) -> dict:
        return {
            "spec": self.spec,
            "params": self.params,
            "cv": self.cv,
            "table_test_re": self.table("test_re"),
            "table_test_rmse": self.table("test_rmse"),
            "per_trial_test_re": self.per_trial("test_re"),
            "runs": [{k: v for k, v in asdict(r).items() if k != "trace"} for r in self.runs],
        }

    def format_table(self, metric="test_re") -> str:
        t = self.table(metric)
        variants = [v for v in VARIANTS if any(v in row for row in t.values())]
        lines = ["solver      " + "".join(f"{VARIANT_LABELS[v]:>14}" for v in variants)]
        for s, row in t.items():
            lines.append(f"{s:<12}" + "".join(f"{row.get(v, float('nan')):>14.4f}" for v in variants))
        return "\n".join(lines)

    def write_bundle(self, outdir):
        outdir = Path(outdir)
        atomic_write(outdir / "summary.json", json.dumps(self.summary(), indent=2, default=_json_default))
        for r in self.runs:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            w.writerows(r.trace)
            atomic_write(outdir / "traces" / f"{r.variant}_{r.solver}_t{r.trial}_i{r.init}.csv", buf.getvalue())


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if sp.issparse(o):
        return None
    raise TypeError(f"not JSON serializable: {type(o)}")


def trial_rngs(seed: int, trial: int, init: int):
    """Sampling seed for a training instance and RNG for one initial point.

    Independent of variant and solver, so every cell of the grid sees the
    same (Omega, U0) pairs.
    """
    return int(np.random.SeedSequence([seed, 1, trial]).generate_state(1)[0]), np.random.default_rng([seed, 2, trial, init])


def run_experiment(spec: ExperimentSpec, log=None) -> ExperimentReport:
    """Run the ``n_test x n_init`` grid for every variant and solver."""
    truth = synth_graph_tensor(spec.synthetic)
    T = truth.tensor
    shape = T.shape
    rank = spec.rank or spec.synthetic.rank
    graphs = [truth.laplacian] + [None] * (len(shape) - 1)

    instances = []
    for ell in range(spec.n_test):
        omega_seed, _ = trial_rngs(spec.seed, ell, 0)
        instances.append(observe(T, SamplingSpec(spec.rate, seed=omega_seed, train_fraction=spec.train_fraction)))

    params, cv_tables = {}, {}
    for v in spec.variants:
        if v in spec.params:
            lam, lamL = spec.params[v]
        elif v == "unreg":
            lam, lamL = 0.0, 0.0
        else:
            res = cross_validate(instances[0][0], graphs, spec.cv, solver=spec.cv_solver, variant=v, rank=rank,
                                 stop=spec.stop, cg=spec.cg, admm_cfg=spec.admm)
            lam, lamL = res.best
            cv_tables[v] = res.to_dict()
        as_variant(v).check(lam, lamL)
        params[v] = (float(lam), float(lamL))
        if log:
            log(f"{VARIANT_LABELS[v]}: lambda={lam:.4g} lambda_L={lamL:.4g}")

    runs = []
    for ell, (train, test) in enumerate(instances):
        for j in range(spec.n_init):
            _, rng = trial_rngs(spec.seed, ell, j)
            init = CPFactors.random(shape, rank, rng)
            for v in spec.variants:
                lam, lamL = params[v]
                laps = as_variant(v).laplacians(graphs, lamL, shape)
                for s in spec.solvers:
                    t0 = time.perf_counter()
                    F, rep = solve(s, train, init, laps, lam, stop=spec.stop, cg=spec.cg, admm_cfg=spec.admm,
                                   test=test)
                    runs.append(RunResult(
                        variant=v, solver=s, trial=ell, init=j, lam=lam, lambda_L=lamL,
                        train_re=relative_error(F, train), test_re=relative_error(F, test),
                        train_rmse=rmse(F, train), test_rmse=rmse(F, test),
                        outer_iters=len(rep.records), time_s=time.perf_counter() - t0,
                        termination=rep.termination, trace=rep.trace_rows(),
                    ))
            if log:
                log(f"trial {ell} init {j} done")
    spec_dict = {
        "shape": list(shape), "rank": rank, "snr_db": spec.synthetic.snr_db, "rate": spec.rate,
        "train_fraction": spec.train_fraction, "n_test": spec.n_test, "n_init": spec.n_init,
        "variants": list(spec.variants), "solvers": list(spec.solvers), "seed": spec.seed,
        "synthetic_seed": spec.synthetic.seed, "communities": spec.synthetic.communities,
    }
    return ExperimentReport(spec_dict, params, runs, cv_tables)

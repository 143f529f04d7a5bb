"""Run configuration files (YAML or JSON) with strict key checking."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from .datagen import SamplingSpec, SyntheticSpec
from .evaluation import CVConfig, ExperimentSpec
from .solvers import ADMMConfig, CGConfig, StoppingRule


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass
class SyntheticSection:
    shape: list = field(default_factory=lambda: [100, 30, 30])
    rank: int = 5
    snr_db: float = 20.0
    seed: int = 0
    communities: int = 5
    p_in: float = 0.5
    p_out: float = 0.01

    def to_spec(self) -> SyntheticSpec:
        return SyntheticSpec(tuple(self.shape), self.rank, self.snr_db, self.seed, None,
                             self.communities, self.p_in, self.p_out)


@dataclass
class SamplingSection:
    rate: float = 0.05
    seed: int = 0
    train_fraction: float = 0.8

    def to_spec(self) -> SamplingSpec:
        return SamplingSpec(self.rate, self.seed, self.train_fraction)


@dataclass
class ModelSection:
    variant: str = "greg"
    solver: str = "altmin-cg"
    rank: int = 5
    lam: float = 0.01
    lambda_L: float = 100.0
    seed: int = 0


@dataclass
class ExperimentSection:
    n_test: int = 5
    n_init: int = 10
    variants: list = field(default_factory=lambda: ["greg", "nuclreg", "unreg"])
    solvers: list = field(default_factory=lambda: ["altmin-cg", "admm"])
    # variant -> [lambda, lambda_L]; others are cross-validated
    params: dict = field(default_factory=dict)
    cv_solver: str = "altmin-cg"
    seed: int = 0


@dataclass
class BenchSection:
    shape: list = field(default_factory=lambda: [200, 100, 100])
    rank: int = 10
    nnz: int = 100_000
    lap_edges: int = 2_000
    repeats: int = 15
    seed: int = 0
    backends: list = field(default_factory=lambda: ["numba", "numpy"])


@dataclass
class PathsSection:
    outdir: Optional[str] = None
    train: Optional[str] = None
    test: Optional[str] = None
    truth: Optional[str] = None
    factors: Optional[str] = None
    graphs: dict = field(default_factory=dict)


@dataclass
class RunConfig:
    synthetic: SyntheticSection = field(default_factory=SyntheticSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    model: ModelSection = field(default_factory=ModelSection)
    cv: CVConfig = field(default_factory=CVConfig)
    cg: CGConfig = field(default_factory=CGConfig)
    admm: ADMMConfig = field(default_factory=ADMMConfig)
    stop: StoppingRule = field(default_factory=StoppingRule)
    experiment: ExperimentSection = field(default_factory=ExperimentSection)
    bench: BenchSection = field(default_factory=BenchSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def experiment_spec(self) -> ExperimentSpec:
        e = self.experiment
        return ExperimentSpec(
            synthetic=self.synthetic.to_spec(),
            rate=self.sampling.rate,
            train_fraction=self.sampling.train_fraction,
            n_test=e.n_test,
            n_init=e.n_init,
            rank=self.model.rank,
            variants=tuple(e.variants),
            solvers=tuple(e.solvers),
            params={k: tuple(v) for k, v in e.params.items()},
            cv=self.cv,
            cv_solver=e.cv_solver,
            stop=self.stop,
            cg=self.cg,
            admm=self.admm,
            seed=e.seed,
        )


# accepted spellings that are not valid Python identifiers
_ALIASES = {"lambda": "lam"}


def _build(cls, data, where):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        name = _ALIASES.get(key, key)
        if name not in fields:
            raise ConfigError(f"{where}: unknown key {key!r} (allowed: {sorted(fields)})")
        sub = _SECTION_TYPES.get((cls, name))
        if sub is not None:
            value = _build(sub, value, f"{where}.{key}")
        elif isinstance(value, str) and value.lower() in ("inf", "infinity", ".inf"):
            value = math.inf
        elif isinstance(value, list) and name in ("bounds", "bounds_L", "grid", "grid_L"):
            value = tuple(float(v) for v in value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


_SECTION_TYPES = {
    (RunConfig, "synthetic"): SyntheticSection,
    (RunConfig, "sampling"): SamplingSection,
    (RunConfig, "model"): ModelSection,
    (RunConfig, "cv"): CVConfig,
    (RunConfig, "cg"): CGConfig,
    (RunConfig, "admm"): ADMMConfig,
    (RunConfig, "stop"): StoppingRule,
    (RunConfig, "experiment"): ExperimentSection,
    (RunConfig, "bench"): BenchSection,
    (RunConfig, "paths"): PathsSection,
    (ADMMConfig, "inner"): CGConfig,
}


def config_from_dict(data) -> RunConfig:
    return _build(RunConfig, data or {}, "config")


def load_config(path=None) -> RunConfig:
    """Read a YAML/JSON config file; ``None`` gives all defaults."""
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return config_from_dict(data)


def config_to_dict(cfg: RunConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["model"]["lambda"] = d["model"].pop("lam")
    return d

"""Graph-regularized low-rank tensor completion in CP format."""
from ._kernels import get_backend, set_backend
from .datagen import SamplingSpec, SyntheticSpec, observe, synth_graph_tensor
from .evaluation import CVConfig, ExperimentSpec, cross_validate, relative_error, rmse, run_experiment
from .formats import DataFormatError, read_graph, read_tns, read_triples, write_graph, write_tns
from .graph import (
    ShiftedLaplacian,
    chain_graph,
    community_graph,
    epsilon_graph,
    laplacian_from_adjacency,
)
from .solvers import ADMMConfig, CGConfig, SolverError, StoppingRule, admm, altmin_cg, linear_cg, solve
from .subproblem import SubproblemOperator, apply_M, objective_gradient, objective_value
from .tensor_core import CPFactors, SparseObservations, khatri_rao, unfold_dense, unfold_observations

__version__ = "0.1.0"

__all__ = [
    "ADMMConfig",
    "CGConfig",
    "CPFactors",
    "CVConfig",
    "DataFormatError",
    "ExperimentSpec",
    "SamplingSpec",
    "ShiftedLaplacian",
    "SolverError",
    "SparseObservations",
    "StoppingRule",
    "SubproblemOperator",
    "SyntheticSpec",
    "admm",
    "altmin_cg",
    "apply_M",
    "chain_graph",
    "community_graph",
    "cross_validate",
    "epsilon_graph",
    "get_backend",
    "khatri_rao",
    "laplacian_from_adjacency",
    "linear_cg",
    "objective_gradient",
    "objective_value",
    "observe",
    "read_graph",
    "read_tns",
    "read_triples",
    "relative_error",
    "rmse",
    "run_experiment",
    "set_backend",
    "solve",
    "synth_graph_tensor",
    "unfold_dense",
    "unfold_observations",
    "write_graph",
    "write_tns",
]

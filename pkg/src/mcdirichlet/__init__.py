"""Monte Carlo solver for Dirichlet problems with measure-valued (Kato class) coefficients.

Solves ``1/2 Lap u + grad u . mu + u nu = -rho`` in a bounded domain with
``u = phi`` on the boundary, by Euler paths with mollified coefficients, and
checks the answers against a ball Green-function oracle and a
finite-difference reference.
"""
from ._backend import HAVE_COMPILED
from .config import RunConfig, load_config, parse_config
from .domain import Ball, Box, SmoothSDF, domain_from_dict, domain_to_dict, make_sdf_domain
from .errors import (
    ConfigError,
    DivergentIntegral,
    GaugeDivergenceWarning,
    MCDirichletError,
    NoContraction,
    NonConvergence,
    NonFiniteState,
    OutOfCache,
    SingularPoint,
    UnsupportedKind,
)
from .feynman_kac import (
    BoundaryData,
    Estimate,
    GaugeReport,
    boundary_data,
    estimate_gauge,
    estimate_u,
    khasminskii_moment_check,
)
from .green import BallGreen, BallSolution, ContractionReport, contraction_factor, contraction_solve
from .instances import INSTANCE_NAMES, Problem, load_instance
from .lattice import Lattice, build_lattice
from .measures import (
    GraphSingularDensity,
    HyperplaneSurface,
    LinearCombination,
    SmoothDensity,
    classify_kato,
    constant_density,
    graph_singular,
    hyperplane,
    kato_norm_M,
    kato_norm_N,
    measure_from_dict,
    measure_to_dict,
)
from .mollifier import MollifiedField, mollify, norm_domination_check
from .sde import Coefficients, SimConfig, caf_resolvent_check, simulate_paths, simulate_to_exit
from .verification import (
    ConvergenceTable,
    convergence_study,
    default_basket,
    fd_oracle_solve,
    fd_solve_problem,
    weak_residual,
)

__version__ = "0.1.0"

__all__ = [
    "__version__", "Ball", "BallGreen", "BallSolution", "boundary_data", "BoundaryData", "Box",
    "build_lattice", "caf_resolvent_check", "classify_kato", "Coefficients", "ConfigError",
    "constant_density", "contraction_factor", "contraction_solve", "ContractionReport",
    "convergence_study", "ConvergenceTable", "default_basket", "DivergentIntegral",
    "domain_from_dict", "domain_to_dict", "Estimate", "estimate_gauge", "estimate_u",
    "fd_oracle_solve", "fd_solve_problem", "GaugeDivergenceWarning", "GaugeReport",
    "graph_singular", "GraphSingularDensity", "HAVE_COMPILED", "hyperplane",
    "HyperplaneSurface", "INSTANCE_NAMES", "kato_norm_M", "kato_norm_N",
    "khasminskii_moment_check", "Lattice", "LinearCombination", "load_config", "load_instance",
    "make_sdf_domain", "MCDirichletError", "measure_from_dict", "measure_to_dict",
    "MollifiedField", "mollify", "NoContraction", "NonConvergence", "NonFiniteState",
    "norm_domination_check", "OutOfCache", "parse_config", "Problem", "RunConfig", "SimConfig",
    "simulate_paths", "simulate_to_exit", "SingularPoint", "SmoothDensity", "SmoothSDF",
    "UnsupportedKind", "weak_residual",
]

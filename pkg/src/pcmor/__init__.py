"""Polynomial chaos expansions, stochastic Galerkin and collocation systems,
POD model order reduction and best approximations for random ODE/DAE models.
"""

__version__ = "0.1.0"

from .pcbasis import BasisSpec, MultiIndexSet, ParameterBox, basis_dimension, evaluate_basis, gram_matrix
from .quadrature import QuadratureRule, expect, gauss_legendre_1d, sparse_grid, tensor_rule
from .models import ParametricSystem, consistent_init, eval_rhs, get_model, scrapie, transistor_amplifier
from .timeint import IntegratorConfig, Trajectory, integrate, interpolate
from .galerkin import GalerkinSystem, assemble_galerkin, galerkin_nonlinear
from .collocation import CollocationSystem, assemble_collocation, solve_coupled, solve_nodes
from .mor import PodResult, ReducedModel, pod, projection_basis, reduce
from .lowdim import Representation, best_approximation, evaluate_qoi, mor_representation, orthonormalize_basis
from .analysis import BoundReport, ErrorReport, l2_error, statistics, theorem_bound

__all__ = [
    "__version__",
    "BasisSpec",
    "MultiIndexSet",
    "ParameterBox",
    "basis_dimension",
    "evaluate_basis",
    "gram_matrix",
    "QuadratureRule",
    "expect",
    "gauss_legendre_1d",
    "sparse_grid",
    "tensor_rule",
    "ParametricSystem",
    "consistent_init",
    "eval_rhs",
    "get_model",
    "scrapie",
    "transistor_amplifier",
    "IntegratorConfig",
    "Trajectory",
    "integrate",
    "interpolate",
    "GalerkinSystem",
    "assemble_galerkin",
    "galerkin_nonlinear",
    "CollocationSystem",
    "assemble_collocation",
    "solve_coupled",
    "solve_nodes",
    "PodResult",
    "ReducedModel",
    "pod",
    "projection_basis",
    "reduce",
    "Representation",
    "best_approximation",
    "evaluate_qoi",
    "mor_representation",
    "orthonormalize_basis",
    "BoundReport",
    "ErrorReport",
    "l2_error",
    "statistics",
    "theorem_bound",
]

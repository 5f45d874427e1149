"""Robust state smoothing with piecewise linear-quadratic penalties.

The package pairs a linear state-space model with convex piecewise
linear-quadratic penalties on the whitened process and measurement
deviations (squared, absolute, Huber, deadzone-linear, or user-defined) and
computes the penalized estimate by an interior-point method whose cost per
iteration is linear in the horizon length.
"""

from .analysis import (
    ConeCheckReport,
    check_coercivity,
    check_domain_membership,
    check_finite,
    normalization_constant,
)
from .errors import (
    DegeneratePenaltyError,
    NotSpdError,
    PlqError,
    TooComplexError,
    UnboundedPenaltyError,
)
from .ip_solver import (
    IpIterate,
    SmootherResult,
    SolverOptions,
    dense_reference_solve,
    ip_solve,
)
from .linalg import BlockTridiagonal, assemble_phi, block_tridiag_factor_solve
from .model import SmootherProblem, StateSpaceModel, build_problem, objective
from .oracle import rts_smooth
from .penalties import (
    AtomKind,
    PlqPenalty,
    block_compose,
    eval_closed_form,
    eval_dual_sup,
    huber,
    l1,
    l2,
    make_atom,
    vapnik,
)
from .sim import NoiseSpec, mse, simulate

__version__ = "0.1.0"

__all__ = [
    "AtomKind",
    "BlockTridiagonal",
    "ConeCheckReport",
    "DegeneratePenaltyError",
    "IpIterate",
    "NoiseSpec",
    "NotSpdError",
    "PlqError",
    "PlqPenalty",
    "SmootherProblem",
    "SmootherResult",
    "SolverOptions",
    "StateSpaceModel",
    "TooComplexError",
    "UnboundedPenaltyError",
    "assemble_phi",
    "block_compose",
    "block_tridiag_factor_solve",
    "build_problem",
    "check_coercivity",
    "check_domain_membership",
    "check_finite",
    "dense_reference_solve",
    "eval_closed_form",
    "eval_dual_sup",
    "huber",
    "ip_solve",
    "l1",
    "l2",
    "make_atom",
    "mse",
    "normalization_constant",
    "objective",
    "rts_smooth",
    "simulate",
    "vapnik",
]

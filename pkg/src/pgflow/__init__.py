"""Policy-gradient flow for stochastic optimal control on the flat torus."""

from .errors import (
    ArgmaxFailure,
    BoxViolation,
    CFLFailure,
    ConservationFailure,
    InvalidArgument,
    NotFound,
    NumericError,
    PGFlowError,
    RegressionFailure,
    StepFailure,
    UnsupportedProblem,
)
from .fields import (
    ControlField,
    ScalarField,
    SpaceTimeGrid,
    gradient_x,
    h2_norm,
    hessian_x,
    interpolate,
    l2_inner,
    l2_norm,
)
from .flow import FlowConfig, FlowResult, FlowState, cost_J, flow_step, functional_gradient, run_flow
from .local_opt import ArgmaxConfig, argmax_G, hjb_residual, local_optimal_field, quartic_closed_forms
from .pde import SolverConfig, fundamental_solution, solve_fp, solve_hj
from .problem import CoState, ProblemSpec, TorusGeometry, eval_D, eval_G, eval_H, grad_u_G, hess_u_G
from .problems import build_problem
from .sampler import estimate_J_mc, regression_update, simulate

__version__ = "0.1.0"

__all__ = [
    "ArgmaxConfig",
    "ArgmaxFailure",
    "BoxViolation",
    "CFLFailure",
    "CoState",
    "ConservationFailure",
    "ControlField",
    "FlowConfig",
    "FlowResult",
    "FlowState",
    "InvalidArgument",
    "NotFound",
    "NumericError",
    "PGFlowError",
    "ProblemSpec",
    "RegressionFailure",
    "ScalarField",
    "SolverConfig",
    "SpaceTimeGrid",
    "StepFailure",
    "TorusGeometry",
    "UnsupportedProblem",
    "argmax_G",
    "build_problem",
    "cost_J",
    "estimate_J_mc",
    "eval_D",
    "eval_G",
    "eval_H",
    "flow_step",
    "functional_gradient",
    "fundamental_solution",
    "grad_u_G",
    "gradient_x",
    "h2_norm",
    "hess_u_G",
    "hessian_x",
    "hjb_residual",
    "interpolate",
    "l2_inner",
    "l2_norm",
    "local_optimal_field",
    "quartic_closed_forms",
    "regression_update",
    "run_flow",
    "simulate",
    "solve_fp",
    "solve_hj",
]

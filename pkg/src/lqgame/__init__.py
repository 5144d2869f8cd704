"""Linear-quadratic two-person zero-sum stochastic differential games.

Riccati integration and audit, closed-loop saddle strategies, value
functions and Monte Carlo verification.
"""

from __future__ import annotations

__version__ = "0.1.0"

from .adjoint import AdjointSolution, check_eta_conditions, solve_eta, value_at
from .errors import (
    InvalidInputError,
    LQGameError,
    NumericOverflowError,
    ParseError,
    RegularityError,
    ValidationError,
)
from .matrix import definiteness, pseudo_inverse, range_inclusion
from .problem import (
    GameProblem,
    MatrixFunction,
    ScalarExpr,
    StackedProblem,
    assemble,
    builtin_problem,
    load_problem,
    make_problem,
    split,
    validate,
)
from .riccati import (
    RegularityReport,
    RiccatiSolution,
    check_regularity,
    compare_regular_solutions,
    integrate_riccati,
    residual_verify,
    riccati_rhs,
    supplied_solution,
)
from .simulate import (
    BrownianBatch,
    MCEstimate,
    Perturbation,
    convexity_probe,
    divergence_probe,
    estimate_J,
    saddle_test,
    simulate_closed_loop,
    simulate_open_loop,
    stationarity_probe,
    stationarity_residual,
)
from .strategy import ClosedLoopStrategy, adjoint_along_path, build_saddle, build_slq_optimal

__all__ = [
    "AdjointSolution",
    "BrownianBatch",
    "ClosedLoopStrategy",
    "GameProblem",
    "InvalidInputError",
    "LQGameError",
    "MCEstimate",
    "MatrixFunction",
    "NumericOverflowError",
    "ParseError",
    "Perturbation",
    "RegularityError",
    "RegularityReport",
    "RiccatiSolution",
    "ScalarExpr",
    "StackedProblem",
    "ValidationError",
    "adjoint_along_path",
    "assemble",
    "build_saddle",
    "build_slq_optimal",
    "builtin_problem",
    "check_eta_conditions",
    "check_regularity",
    "compare_regular_solutions",
    "convexity_probe",
    "definiteness",
    "divergence_probe",
    "estimate_J",
    "integrate_riccati",
    "load_problem",
    "make_problem",
    "pseudo_inverse",
    "range_inclusion",
    "residual_verify",
    "riccati_rhs",
    "saddle_test",
    "simulate_closed_loop",
    "simulate_open_loop",
    "solve_eta",
    "split",
    "stationarity_probe",
    "stationarity_residual",
    "supplied_solution",
    "validate",
    "value_at",
]

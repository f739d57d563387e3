"""Payoff optimization under weighted entropic risk in a one-period market.

Two solvers built on the same monotone fixed-point machinery: the least
risk attainable at a given price (with its multiplier and diagnostics),
and expected-utility maximization under a risk cap.  Log-normal pricing
kernels get closed-form fast paths; brute-force oracles certify both
solvers on small spaces.
"""

from .errors import (
    ConvergenceError,
    EntriskError,
    InfeasibleRiskError,
    InputError,
)
from .statespace import (
    LogNormalSDF,
    ProbSpace,
    as_payoff,
    expectation,
    normal_cdf,
    normal_quantile,
    price,
)
from .measure import (
    GateauxReport,
    RiskDensityCurve,
    RiskProfile,
    WeightingMeasure,
    certainty_equivalent,
    entropic_risk,
    gateaux_check,
    risk_gradient,
    risk_profile,
    weighted_entropic_risk,
)
from .riskmin import (
    EntropicRiskMinSolution,
    FixedPointResult,
    IntegralCheck,
    RiskMinReport,
    SolverConfig,
    entropic_risk_min_closed_form,
    fixed_point_map,
    integral_system_residual,
    integral_system_residual_lognormal,
    lambda_search,
    solve_fixed_point,
    solve_risk_min,
)
from .eumax import (
    EntropicEUSolution,
    EUMaxReport,
    LogUtility,
    PowerUtility,
    UnconstrainedSolution,
    entropic_eu_closed_form,
    eu_integral_residual_lognormal,
    fixed_point_map_eu,
    lambda_search_eu,
    single_crossing_count,
    solve_eu_max,
    solve_fixed_point_eu,
    solve_unconstrained,
)
from .oracle import (
    OracleConfig,
    RandomInstance,
    brute_force_eu_max,
    brute_force_risk_min,
    kkt_check_eumax,
    kkt_check_riskmin,
    random_instance,
)
from .config import RunConfig, load_config

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError",
    "EntriskError",
    "InfeasibleRiskError",
    "InputError",
    "LogNormalSDF",
    "ProbSpace",
    "as_payoff",
    "expectation",
    "normal_cdf",
    "normal_quantile",
    "price",
    "GateauxReport",
    "RiskDensityCurve",
    "RiskProfile",
    "WeightingMeasure",
    "certainty_equivalent",
    "entropic_risk",
    "gateaux_check",
    "risk_gradient",
    "risk_profile",
    "weighted_entropic_risk",
    "EntropicRiskMinSolution",
    "FixedPointResult",
    "IntegralCheck",
    "RiskMinReport",
    "SolverConfig",
    "entropic_risk_min_closed_form",
    "fixed_point_map",
    "integral_system_residual",
    "integral_system_residual_lognormal",
    "lambda_search",
    "solve_fixed_point",
    "solve_risk_min",
    "EntropicEUSolution",
    "EUMaxReport",
    "LogUtility",
    "PowerUtility",
    "UnconstrainedSolution",
    "entropic_eu_closed_form",
    "eu_integral_residual_lognormal",
    "fixed_point_map_eu",
    "lambda_search_eu",
    "single_crossing_count",
    "solve_eu_max",
    "solve_fixed_point_eu",
    "solve_unconstrained",
    "OracleConfig",
    "RandomInstance",
    "brute_force_eu_max",
    "brute_force_risk_min",
    "kkt_check_eumax",
    "kkt_check_riskmin",
    "random_instance",
    "RunConfig",
    "load_config",
    "__version__",
]

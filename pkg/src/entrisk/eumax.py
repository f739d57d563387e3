"""Expected-utility maximization under a price constraint and a risk budget.

The constrained optimum balances three forces state by state: marginal
utility, the marginal risk density scaled by a multiplier mu, and the
priced constraint lam * rho.  For fixed (mu, lam) the payoff solves a
per-state scalar equation tied together through the exponential moments,
again a monotone fixed point; the multipliers are then pinned by nested
bisection, mu on the achieved risk and lam on the achieved price.

Risk budgets are meaningful only between gamma1 (the least risk any payoff
of that price can carry) and gamma2 (the risk of the unconstrained utility
optimum); the entry point checks that band first and handles its edges
explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import integrate

from .errors import ConvergenceError, InfeasibleRiskError, InputError
from .measure import WeightingMeasure, risk_gradient, weighted_entropic_risk
from .riskmin import (
    SolverConfig,
    FixedPointResult,
    _GuardedSecant,
    _solve_accelerated,
    price_fast,
    solve_risk_min,
)
from .statespace import LogNormalSDF, ProbSpace, as_payoff, expectation, price

__all__ = [
    "LogUtility",
    "PowerUtility",
    "UnconstrainedSolution",
    "EUMaxReport",
    "EntropicEUSolution",
    "solve_unconstrained",
    "fixed_point_map_eu",
    "solve_fixed_point_eu",
    "lambda_search_eu",
    "solve_eu_max",
    "entropic_eu_closed_form",
    "eu_integral_residual_lognormal",
    "single_crossing_count",
]

_EXP_CLIP = 500.0
# Two risk levels closer than this are treated as the same boundary case.
_GAMMA_EDGE = 1e-9


@dataclass(frozen=True)
class LogUtility:
    """u(y) = log y."""

    def value(self, y: ArrayLike) -> NDArray[np.float64]:
        return np.log(y)

    def marginal(self, y: ArrayLike) -> NDArray[np.float64]:
        return 1.0 / np.asarray(y, dtype=np.float64)

    def marginal_slope(self, y: ArrayLike) -> NDArray[np.float64]:
        y_arr = np.asarray(y, dtype=np.float64)
        return -1.0 / (y_arr * y_arr)

    def inverse_marginal(self, z: ArrayLike) -> NDArray[np.float64]:
        return 1.0 / np.asarray(z, dtype=np.float64)


@dataclass(frozen=True)
class PowerUtility:
    """u(y) = y^(1-r) / (1-r) for r > 0, r != 1; relative risk aversion r."""

    r: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.r) and self.r > 0.0) or self.r == 1.0:
            raise InputError(f"power utility needs r > 0, r != 1, got {self.r!r}")

    def value(self, y: ArrayLike) -> NDArray[np.float64]:
        y_arr = np.asarray(y, dtype=np.float64)
        return y_arr ** (1.0 - self.r) / (1.0 - self.r)

    def marginal(self, y: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(y, dtype=np.float64) ** (-self.r)

    def marginal_slope(self, y: ArrayLike) -> NDArray[np.float64]:
        y_arr = np.asarray(y, dtype=np.float64)
        return -self.r * y_arr ** (-self.r - 1.0)

    def inverse_marginal(self, z: ArrayLike) -> NDArray[np.float64]:
        return np.asarray(z, dtype=np.float64) ** (-1.0 / self.r)


Utility = LogUtility | PowerUtility


@dataclass(frozen=True)
class UnconstrainedSolution:
    payoff: NDArray[np.float64]
    lambda_star: float
    eu_value: float
    risk_value: float | None = None


def solve_unconstrained(
    utility: Utility,
    space: ProbSpace,
    budget_x: float,
    config: SolverConfig | None = None,
) -> UnconstrainedSolution:
    """Classic price-only utility optimum: payoff = (u')^{-1}(lam rho).

    The multiplier comes from bisecting the price, which is continuous and
    strictly decreasing in lam with full range, so the bracket always
    exists.  For log utility this lands on payoff x/rho and lam = 1/x.
    """
    cfg = config or SolverConfig()
    if not (np.isfinite(budget_x) and budget_x > 0.0):
        raise InputError(f"budget must be positive, got {budget_x!r}")
    prho = space.probs * space.sdf

    def priced(lam: float) -> float:
        return float(prho @ utility.inverse_marginal(lam * space.sdf))

    lo = hi = 1.0 / budget_x
    for _ in range(400):
        if priced(lo) > budget_x:
            break
        lo *= 0.5
    for _ in range(400):
        if priced(hi) < budget_x:
            break
        hi *= 2.0
    lam = 0.5 * (lo + hi)
    for _ in range(400):
        lam = 0.5 * (lo + hi)
        bud = priced(lam)
        if abs(bud - budget_x) <= cfg.budget_rtol * budget_x:
            break
        if bud > budget_x:
            lo = lam
        else:
            hi = lam
    else:
        raise ConvergenceError("unconstrained price bisection did not converge")
    x = np.asarray(utility.inverse_marginal(lam * space.sdf))
    eu = math.fsum(space.probs * np.asarray(utility.value(x)))
    return UnconstrainedSolution(payoff=x, lambda_star=lam, eu_value=eu)


class _EngineEU:
    """Vectorized per-pass arithmetic for the utility fixed point."""

    def __init__(
        self,
        measure: WeightingMeasure,
        space: ProbSpace,
        utility: Utility,
        mu: float,
        lam: float,
    ):
        if not (np.isfinite(mu) and mu >= 0.0):
            raise InputError(f"risk multiplier must be nonnegative, got {mu!r}")
        if not (np.isfinite(lam) and lam > 0.0):
            raise InputError(f"price multiplier must be positive, got {lam!r}")
        self.a = measure.atoms
        self.logw = np.log(measure.weights)
        self.p = space.probs
        self.rho = space.sdf
        self.utility = utility
        self.mu = mu
        self.t = lam * space.sdf
        self.ftol = 1e-12 * np.maximum(1.0, self.t)
        # Marginal utility alone already prices the state: a left bracket.
        self.floor = np.asarray(utility.inverse_marginal(self.t))

    def log_moments(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        shift = x.min()
        e = np.exp(np.minimum(-np.outer(x - shift, self.a), 0.0))
        return -self.a * shift + np.log(e.T @ self.p)

    def map_pass(
        self, u: NDArray[np.float64], x_warm: NDArray[np.float64]
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        x = self._solve_states(u, x_warm)
        return self.log_moments(x), x

    def _solve_states(
        self, u: NDArray[np.float64], x_warm: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        """Per-state root of marginal utility + mu * curve = priced level.

        Safeguarded Newton with live brackets: the left edge starts at the
        pure-utility payoff, the right edge is discovered by expansion.
        """
        c = self.logw - u
        util = self.utility
        mu = self.mu
        y = np.maximum(x_warm, self.floor)
        lo = self.floor.copy()
        hi = np.full(y.shape, np.inf)
        live = np.arange(y.size)

        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            for _ in range(100):
                yl = y[live]
                e = np.exp(np.minimum(c - yl[:, None] * self.a, _EXP_CLIP))
                g = util.marginal(yl) + mu * e.sum(axis=1) - self.t[live]
                done = np.abs(g) <= self.ftol[live]
                pos = g > 0.0
                lo_l = lo[live]
                hi_l = hi[live]
                np.copyto(lo_l, yl, where=pos)
                np.copyto(hi_l, yl, where=~(pos | done))
                slope = util.marginal_slope(yl) - mu * np.minimum(e @ self.a, 1e280)
                yn = yl - g / slope
                no_hi = np.isinf(hi_l)
                bad = ~np.isfinite(yn) | (yn <= lo_l) | (yn >= hi_l)
                np.copyto(yn, 2.0 * np.maximum(yl, lo_l), where=bad & no_hi)
                np.copyto(yn, 0.5 * (lo_l + hi_l), where=bad & ~no_hi)
                np.copyto(yn, yl, where=done)
                y[live] = yn
                lo[live] = lo_l
                hi[live] = hi_l
                live = live[~done]
                if live.size == 0:
                    break
        return y


def fixed_point_map_eu(
    measure: WeightingMeasure,
    space: ProbSpace,
    utility: Utility,
    payoff: ArrayLike,
    mu: float,
    lam: float,
) -> NDArray[np.float64]:
    """One application of the utility payoff map at multipliers (mu, lam)."""
    x = as_payoff(space, payoff)
    engine = _EngineEU(measure, space, utility, mu, lam)
    u = engine.log_moments(x)
    return engine._solve_states(u, x)


def solve_fixed_point_eu(
    measure: WeightingMeasure,
    space: ProbSpace,
    utility: Utility,
    mu: float,
    lam: float,
    config: SolverConfig | None = None,
) -> FixedPointResult:
    """Monotone iteration of the utility map from the zero payoff.

    Same stopping and divergence semantics as the risk-minimization
    iteration; divergence here flags a price multiplier too small for the
    given risk multiplier.
    """
    cfg = config or SolverConfig()
    engine = _EngineEU(measure, space, utility, mu, lam)
    log_floor = math.log(cfg.divergence_floor)
    price_ceiling = 1.0 / cfg.divergence_floor
    prho = space.probs * space.sdf
    x = np.zeros(space.n_states)
    u = engine.log_moments(x)
    for it in range(1, cfg.max_iter + 1):
        u, x_new = engine.map_pass(u, x)
        step = float(np.abs(x_new - x).max())
        x = x_new
        if u.min() < log_floor:
            return FixedPointResult(None, True, it, "exponential moment underflow")
        if float(prho @ x) > price_ceiling:
            return FixedPointResult(None, True, it, "price of iterate blew up")
        if step <= cfg.tol_payoff:
            return FixedPointResult(x, False, it, "converged")
    raise ConvergenceError(
        f"utility fixed point did not converge in {cfg.max_iter} iterations "
        f"(mu={mu!r}, lam={lam!r})",
        iterations=cfg.max_iter,
    )


@dataclass
class _LambdaEUResult:
    lambda_star: float
    payoff: NDArray[np.float64]
    log_moments: NDArray[np.float64]
    iterations: int


def lambda_search_eu(
    measure: WeightingMeasure,
    space: ProbSpace,
    utility: Utility,
    mu: float,
    budget_x: float,
    config: SolverConfig | None = None,
    lam_hint: float | None = None,
) -> _LambdaEUResult:
    """Bisect the price multiplier at fixed mu until the price matches.

    The theory floors viable multipliers at mu/E[rho]; anything at or
    below diverges and is treated as "price too high".  A hint from a
    neighboring mu tightens the starting bracket.
    """
    cfg = config or SolverConfig()
    if not (np.isfinite(budget_x) and budget_x > 0.0):
        raise InputError(f"budget must be positive, got {budget_x!r}")
    floor = mu / space.mean_sdf() * (1.0 + 1e-9)
    passes = 0
    u_warm = np.zeros(measure.n_atoms)

    def run(lam: float) -> tuple[str, NDArray[np.float64], NDArray[np.float64]]:
        nonlocal passes, u_warm
        engine = _EngineEU(measure, space, utility, mu, lam)
        status, u, x, used = _solve_accelerated(engine, u_warm, cfg)
        passes += used
        if status == "stuck" and space.n_states <= 20_000:
            result = solve_fixed_point_eu(measure, space, utility, mu, lam, cfg)
            passes += result.iterations
            if result.diverged:
                status = "diverged"
            else:
                x = result.payoff
                u = engine.log_moments(x)
                status = "ok"
        if status == "ok":
            u_warm = u
        return status, u, x

    if lam_hint is not None and lam_hint > floor:
        lo, hi = max(floor, 0.5 * lam_hint), 2.0 * lam_hint
    else:
        lo, hi = max(floor, 1e-8 / budget_x), max(2.0 * floor, 2.0 / budget_x)

    f_lo: float | None = None
    f_hi: float | None = None
    # Push the upper edge down the price curve until it is below target...
    for _ in range(300):
        status, u, x = run(hi)
        if status == "ok":
            bud = price_fast(space, x)
            if abs(bud - budget_x) <= cfg.budget_rtol * budget_x:
                return _LambdaEUResult(hi, x, u, passes)
            if bud < budget_x:
                f_hi = bud - budget_x
                break
            lo, f_lo = hi, bud - budget_x
        else:
            lo, f_lo = hi, None
        hi *= 2.0
    else:
        raise ConvergenceError("could not bracket the price multiplier (upper)")
    # ...and make sure the lower edge is above it (or pinned at the floor).
    for _ in range(300):
        if lo <= floor * (1.0 + 1e-12):
            break
        if f_lo is not None and f_lo > 0.0:
            break
        status, u, x = run(lo)
        if status != "ok":
            break
        bud = price_fast(space, x)
        if abs(bud - budget_x) <= cfg.budget_rtol * budget_x:
            return _LambdaEUResult(lo, x, u, passes)
        if bud > budget_x:
            f_lo = bud - budget_x
            break
        hi, f_hi = lo, bud - budget_x
        lo, f_lo = max(floor, 0.5 * lo), None
    search = _GuardedSecant(lo, hi, f_lo, f_hi)
    for _ in range(300):
        lo, hi = search.lo, search.hi
        if hi - lo <= 1e-14 * max(lo, 1e-300):
            break
        mid = search.propose()
        status, u, x = run(mid)
        if status != "ok":
            search.fail_low(mid)
            continue
        bud = price_fast(space, x)
        if abs(bud - budget_x) <= cfg.budget_rtol * budget_x:
            return _LambdaEUResult(mid, x, u, passes)
        search.update(mid, bud - budget_x)
    raise ConvergenceError("price bisection at fixed mu did not converge")


@dataclass(frozen=True)
class EUMaxReport:
    """Solution bundle for one utility-maximization run."""

    payoff: NDArray[np.float64]
    lambda_star: float
    mu_star: float
    eu_value: float
    risk_value: float
    gamma1: float
    gamma2: float
    budget_residual: float
    risk_residual: float
    kkt_residual: float
    iterations: int
    bisections: int
    boundary: str
    unconstrained_payoff: NDArray[np.float64]


def solve_eu_max(
    measure: WeightingMeasure,
    space: ProbSpace,
    utility: Utility,
    budget_x: float,
    gamma: float,
    config: SolverConfig | None = None,
) -> EUMaxReport:
    """Maximize expected utility at price budget_x subject to risk <= gamma.

    Checks the attainable band first: below gamma1 is infeasible (raises,
    with both bounds attached); at gamma1 the risk minimizer is the only
    candidate; at or above gamma2 the risk constraint is slack and the
    unconstrained optimum is returned with mu = 0.  Strictly inside, the
    risk multiplier is bisected on the achieved risk, with the price
    multiplier re-solved at every step.
    """
    cfg = config or SolverConfig()
    if not np.isfinite(gamma):
        raise InputError(f"risk budget must be finite, got {gamma!r}")
    riskmin_report = solve_risk_min(measure, space, budget_x, cfg)
    gamma1 = riskmin_report.risk_value
    unconstrained = solve_unconstrained(utility, space, budget_x, cfg)
    x_free = unconstrained.payoff
    gamma2 = weighted_entropic_risk(measure, space, x_free)

    if gamma < gamma1 - _GAMMA_EDGE:
        raise InfeasibleRiskError(gamma, gamma1, gamma2)

    if gamma <= gamma1 + _GAMMA_EDGE:
        x = riskmin_report.payoff
        return EUMaxReport(
            payoff=x,
            lambda_star=riskmin_report.lambda_star,
            mu_star=math.inf,
            eu_value=math.fsum(space.probs * np.asarray(utility.value(np.maximum(x, 1e-300)))),
            risk_value=gamma1,
            gamma1=gamma1,
            gamma2=gamma2,
            budget_residual=riskmin_report.budget_residual,
            risk_residual=gamma1 - gamma,
            kkt_residual=riskmin_report.kkt_residual,
            iterations=riskmin_report.iterations,
            bisections=riskmin_report.bisections,
            boundary="gamma1",
            unconstrained_payoff=x_free,
        )

    if gamma >= gamma2:
        kkt = float(
            np.abs(
                np.asarray(utility.marginal(x_free))
                - unconstrained.lambda_star * space.sdf
            ).max()
        )
        return EUMaxReport(
            payoff=x_free,
            lambda_star=unconstrained.lambda_star,
            mu_star=0.0,
            eu_value=unconstrained.eu_value,
            risk_value=gamma2,
            gamma1=gamma1,
            gamma2=gamma2,
            budget_residual=price(space, x_free) - budget_x,
            risk_residual=gamma2 - gamma,
            kkt_residual=kkt,
            iterations=0,
            bisections=0,
            boundary="gamma2",
            unconstrained_payoff=x_free,
        )

    # Interior: achieved risk decreases continuously in mu, from gamma2 at
    # mu = 0 toward gamma1; bracket by doubling, then close in with a
    # bracketed secant on the risk gap.
    passes = 0
    lam_hint: float | None = unconstrained.lambda_star
    mu_lo, mu_hi = 0.0, 1.0
    f_lo: float | None = gamma2 - gamma
    f_hi: float | None = None
    for _ in range(200):
        inner = lambda_search_eu(
            measure, space, utility, mu_hi, budget_x, cfg, lam_hint
        )
        passes += inner.iterations
        lam_hint = inner.lambda_star
        achieved = float(np.sum(measure.weights / measure.atoms * inner.log_moments))
        if achieved < gamma:
            f_hi = achieved - gamma
            break
        mu_lo, f_lo = mu_hi, achieved - gamma
        mu_hi *= 2.0
    else:
        raise ConvergenceError("could not bracket the risk multiplier")

    mu = mu_hi
    bisections = 0
    search = _GuardedSecant(mu_lo, mu_hi, f_lo, f_hi)
    for bisections in range(1, 201):
        if abs(achieved - gamma) <= cfg.risk_atol:
            break
        if search.hi - search.lo <= 1e-16 * max(search.hi, 1.0):
            raise ConvergenceError(
                f"risk bracket collapsed before tolerance {cfg.risk_atol:g}"
            )
        mu = search.propose()
        inner = lambda_search_eu(measure, space, utility, mu, budget_x, cfg, lam_hint)
        passes += inner.iterations
        lam_hint = inner.lambda_star
        achieved = float(np.sum(measure.weights / measure.atoms * inner.log_moments))
        search.update(mu, achieved - gamma)
    else:
        raise ConvergenceError(
            f"risk bisection did not meet tolerance {cfg.risk_atol:g}"
        )

    x = inner.payoff
    risk_value = weighted_entropic_risk(measure, space, x)
    grad = risk_gradient(measure, space, x)
    kkt = float(
        np.abs(
            np.asarray(utility.marginal(x)) - mu * grad - inner.lambda_star * space.sdf
        ).max()
    )
    return EUMaxReport(
        payoff=x,
        lambda_star=inner.lambda_star,
        mu_star=mu,
        eu_value=math.fsum(space.probs * np.asarray(utility.value(x))),
        risk_value=risk_value,
        gamma1=gamma1,
        gamma2=gamma2,
        budget_residual=price(space, x) - budget_x,
        risk_residual=risk_value - gamma,
        kkt_residual=kkt,
        iterations=passes,
        bisections=bisections,
        boundary="interior",
        unconstrained_payoff=x_free,
    )


@dataclass(frozen=True)
class EntropicEUSolution:
    """Single-atom constrained optimum on the log-normal continuum.

    With one aversion level the curve is a single exponential in y shifted
    by the risk budget, so the whole problem reduces to two scalar
    multiplier equations solved by nested bisection over high-order
    quadrature in the normal variable.
    """

    a: float
    gamma: float
    budget: float
    model: LogNormalSDF
    lambda_star: float
    mu_star: float
    achieved_budget: float
    achieved_risk: float
    _utility: Utility

    def payoff(self, rho: ArrayLike) -> NDArray[np.float64] | float:
        r = np.atleast_1d(np.asarray(rho, dtype=np.float64))
        out = _entropic_eu_states(
            self._utility, self.a, self.gamma, self.mu_star, self.lambda_star * r
        )
        if np.ndim(rho) == 0:
            return float(out[0])
        return out

    def on_space(self, space: ProbSpace) -> NDArray[np.float64]:
        return np.asarray(self.payoff(space.sdf))


def _entropic_eu_states(
    utility: Utility,
    a: float,
    gamma: float,
    mu: float,
    t: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Solve marginal(y) + mu * exp(-a (y + gamma)) = t per entry."""
    shift = math.exp(-a * gamma)
    y = np.asarray(utility.inverse_marginal(t))
    lo = y.copy()
    hi = np.full(y.shape, np.inf)
    for _ in range(200):
        e = mu * shift * np.exp(np.minimum(-a * y, _EXP_CLIP))
        g = np.asarray(utility.marginal(y)) + e - t
        done = np.abs(g) <= 1e-13 * np.maximum(1.0, t)
        if done.all():
            break
        pos = g > 0.0
        lo = np.where(pos & ~done, y, lo)
        hi = np.where(~pos & ~done, y, hi)
        slope = np.asarray(utility.marginal_slope(y)) - a * e
        with np.errstate(invalid="ignore", over="ignore"):
            yn = y - g / slope
        no_hi = ~np.isfinite(hi)
        bad = ~np.isfinite(yn) | (yn <= lo) | (yn >= hi)
        yn = np.where(bad & no_hi, 2.0 * np.maximum(y, lo), yn)
        yn = np.where(bad & ~no_hi, 0.5 * (lo + hi), yn)
        y = np.where(done, y, yn)
    return y


def entropic_eu_closed_form(
    a: float,
    gamma: float,
    budget_x: float,
    utility: Utility,
    model: LogNormalSDF,
    quad_order: int = 400,
) -> EntropicEUSolution:
    """Nested bisection for the single-atom multipliers on the continuum.

    Inner loop matches the price, outer loop matches the exponential
    moment exp(a * gamma).  Integrals run over the normal variable on
    [-10, 10] with Gauss-Legendre nodes; the integrands are smooth, so the
    truncation and quadrature errors sit far below the solver tolerances.
    """
    if not (np.isfinite(a) and a > 0.0):
        raise InputError(f"aversion level must be positive, got {a!r}")
    if not (np.isfinite(budget_x) and budget_x > 0.0):
        raise InputError(f"budget must be positive, got {budget_x!r}")
    if not np.isfinite(gamma):
        raise InputError(f"risk budget must be finite, got {gamma!r}")
    nodes, weights = np.polynomial.legendre.leggauss(quad_order)
    z = 10.0 * nodes
    wq = 10.0 * weights * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    rho = np.exp(model.b + model.sigma * z)
    wrho = wq * rho
    target_moment = math.exp(a * gamma)

    def inner(mu: float) -> tuple[float, NDArray[np.float64]]:
        lo, hi = 1e-12, 2.0 / budget_x
        for _ in range(300):
            x = _entropic_eu_states(utility, a, gamma, mu, hi * rho)
            if float(wrho @ x) < budget_x:
                break
            lo = hi
            hi *= 2.0
        for _ in range(300):
            lam = 0.5 * (lo + hi)
            x = _entropic_eu_states(utility, a, gamma, mu, lam * rho)
            bud = float(wrho @ x)
            if abs(bud - budget_x) <= 1e-11 * budget_x:
                return lam, x
            if bud > budget_x:
                lo = lam
            else:
                hi = lam
        raise ConvergenceError("inner price bisection failed in closed form")

    def moment_of(x: NDArray[np.float64]) -> float:
        return float(wq @ np.exp(-a * x))

    # The moment falls as mu grows: the penalty lifts the payoff exactly
    # where e^{-aX} is large, so the achieved risk slides down from
    # gamma2 and the moment crosses the target from above.
    mu_lo, mu_hi = 0.0, 1.0
    lam, x = inner(mu_hi)
    for _ in range(200):
        if moment_of(x) < target_moment:
            break
        mu_lo = mu_hi
        mu_hi *= 2.0
        lam, x = inner(mu_hi)
    else:
        raise ConvergenceError("could not bracket mu in closed form")
    for _ in range(200):
        mu = 0.5 * (mu_lo + mu_hi)
        lam, x = inner(mu)
        m = moment_of(x)
        if abs(m - target_moment) <= 1e-12 * target_moment:
            break
        if m > target_moment:
            mu_lo = mu
        else:
            mu_hi = mu
    return EntropicEUSolution(
        a=a,
        gamma=gamma,
        budget=budget_x,
        model=model,
        lambda_star=lam,
        mu_star=mu,
        achieved_budget=float(wrho @ x),
        achieved_risk=math.log(moment_of(x)) / a,
        _utility=utility,
    )


def eu_integral_residual_lognormal(
    a: float,
    gamma: float,
    model: LogNormalSDF,
    utility: Utility,
    mu: float,
    lam: float,
) -> float:
    """Adaptive-quadrature consistency residual of the single-atom optimum.

    The exponential moment must equal 1 - a * integral of
    exp(-a y) F((marginal(y) + mu exp(-a(y+gamma)))/lam) over y > 0.
    """
    shift = math.exp(-a * gamma)

    def integrand(y: float) -> float:
        level = float(utility.marginal(y)) + mu * shift * math.exp(-a * y)
        return math.exp(-a * y) * float(model.cdf(level / lam))

    val, _ = integrate.quad(integrand, 0.0, np.inf, limit=200)
    return abs(math.exp(a * gamma) - (1.0 - a * val))


def single_crossing_count(
    space: ProbSpace,
    payoff_a: ArrayLike,
    payoff_b: ArrayLike,
    zero_tol: float | None = None,
) -> int:
    """Count sign changes of payoff_a - payoff_b along the state order.

    Both payoffs must be nonincreasing in the SDF (the shape optimal
    payoffs share).  Differences within zero_tol of zero are dropped
    before counting, so plateaus and solver noise do not register; the
    default tolerance scales with the payoffs' magnitude.
    """
    xa = as_payoff(space, payoff_a)
    xb = as_payoff(space, payoff_b)
    scale = max(1.0, float(xa.max()), float(xb.max()))
    wiggle = 1e-9 * scale
    for name, arr in (("payoff_a", xa), ("payoff_b", xb)):
        if np.any(np.diff(arr) > wiggle):
            raise InputError(f"{name} is not nonincreasing along the state order")
    tol = zero_tol if zero_tol is not None else 1e-4 * scale
    d = xa - xb
    signs = np.sign(d[np.abs(d) > tol])
    if signs.size < 2:
        return 0
    return int(np.sum(signs[1:] != signs[:-1]))

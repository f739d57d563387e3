"""Cheapest-payoff risk minimization under a price constraint.

Given a weighting measure, a finite market, and a price level x, find the
nonnegative payoff of price x with the least weighted entropic risk.  The
optimum is characterized by a multiplier lambda and the fixed point of a
monotone map: recompute the payoff implied by the current payoff's own
exponential moments, state by state, and repeat.

Two engines share the same per-pass arithmetic.  ``solve_fixed_point`` runs
the plain monotone iteration from the zero payoff, which is the reference
semantics and also the divergence detector.  ``lambda_search`` wraps a
faster engine that extrapolates the low-dimensional log-moment vector
(Anderson mixing); every answer it returns is verified a posteriori by the
fixed-point residual, so acceleration never changes what counts as a
solution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import integrate, optimize
from scipy.special import ndtr

from .errors import ConvergenceError, InputError
from .measure import (
    RiskDensityCurve,
    WeightingMeasure,
    risk_gradient,
    risk_profile,
    weighted_entropic_risk,
)
from .statespace import LogNormalSDF, ProbSpace, as_payoff, price

__all__ = [
    "SolverConfig",
    "FixedPointResult",
    "LambdaSearchResult",
    "RiskMinReport",
    "EntropicRiskMinSolution",
    "fixed_point_map",
    "solve_fixed_point",
    "lambda_search",
    "solve_risk_min",
    "entropic_risk_min_closed_form",
    "integral_system_residual",
    "integral_system_residual_lognormal",
]

_EXP_CLIP = 500.0
# States with payoff above this threshold must satisfy the first-order
# equality; below it only the one-sided condition applies.
_ACTIVE_EPS = 1e-9


@dataclass(frozen=True)
class SolverConfig:
    """Tolerances and budgets shared by the payoff solvers.

    risk_atol governs the outer risk-equality exit in the constrained
    utility solver.  Each risk evaluation there sits on top of a budget
    solve, so its noise scales with budget_rtol; tightening risk_atol
    much below 100x budget_rtol starves the outer search, and the two
    should be lowered together (for instance 1e-9 with 1e-10).
    """

    tol_payoff: float = 1e-10
    max_iter: int = 10_000
    divergence_floor: float = 1e-300
    budget_rtol: float = 1e-8
    risk_atol: float = 1e-6

    def __post_init__(self) -> None:
        if self.tol_payoff <= 0 or self.budget_rtol <= 0 or self.risk_atol <= 0:
            raise InputError("tolerances must be positive")
        if self.max_iter < 1:
            raise InputError("max_iter must be at least 1")
        if not 0.0 < self.divergence_floor < 1e-100:
            raise InputError("divergence_floor must be a tiny positive number")


@dataclass(frozen=True)
class FixedPointResult:
    """Outcome of the monotone iteration at a fixed multiplier."""

    payoff: NDArray[np.float64] | None
    diverged: bool
    iterations: int
    reason: str

    @property
    def converged(self) -> bool:
        return self.payoff is not None and not self.diverged


@dataclass
class LambdaSearchResult:
    lambda_star: float
    payoff: NDArray[np.float64]
    log_moments: NDArray[np.float64]
    iterations: int
    bisections: int
    evaluations: list[tuple[float, float]] = field(default_factory=list)


@dataclass(frozen=True)
class RiskMinReport:
    """Solution bundle for one risk-minimization run."""

    payoff: NDArray[np.float64]
    lambda_star: float
    risk_value: float
    budget_residual: float
    kkt_residual: float
    psi_residual: float
    iterations: int
    bisections: int


class _Engine:
    """Vectorized per-pass arithmetic shared by both iteration modes."""

    def __init__(self, measure: WeightingMeasure, space: ProbSpace, lam: float):
        if not (np.isfinite(lam) and lam > 0.0):
            raise InputError(f"multiplier must be positive, got {lam!r}")
        self.a = measure.atoms
        self.logw = np.log(measure.weights)
        self.p = space.probs
        self.rho = space.sdf
        self.prho = space.probs * space.sdf
        self.logs = np.log(lam) + np.log(space.sdf)

    def log_moments(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        shift = x.min()
        e = np.exp(-np.outer(x - shift, self.a))
        return -self.a * shift + np.log(e.T @ self.p)

    def map_pass(
        self, u: NDArray[np.float64], x_warm: NDArray[np.float64]
    ) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Apply the map once: payoff implied by moments u, then its moments."""
        c = self.logw - u
        cmax = c.max()
        log_at_zero = cmax + math.log(np.exp(c - cmax).sum())
        mask = log_at_zero > self.logs
        x = np.zeros(self.p.size)
        if mask.any():
            x[mask] = np.maximum(
                self._invert(c, self.logs[mask], x_warm[mask]), 0.0
            )
        return self.log_moments(x), x

    def _invert(
        self,
        c: NDArray[np.float64],
        target: NDArray[np.float64],
        y0: NDArray[np.float64],
    ) -> NDArray[np.float64]:
        # Newton on the log curve; convex with slope in [-a_max, -a_min],
        # so it converges from any start and cannot escape to infinity.
        y = y0.copy()
        live = np.arange(y.size)
        for _ in range(80):
            e = np.exp(np.minimum(c[None, :] - np.outer(y[live], self.a), _EXP_CLIP))
            total = e.sum(axis=1)
            g = np.log(total) - target[live]
            y[live] -= g / (-(e @ self.a) / total)
            live = live[np.abs(g) > 1e-13]
            if live.size == 0:
                break
        return y

    def budget(self, x: NDArray[np.float64]) -> float:
        return float(self.prho @ x)


def fixed_point_map(
    measure: WeightingMeasure, space: ProbSpace, payoff: ArrayLike, lam: float
) -> NDArray[np.float64]:
    """One application of the monotone payoff map at multiplier lam.

    The candidate's own moments define the density curve; the new payoff
    takes, in each state, the positive part of the wealth level at which
    that curve meets lam times the state price.
    """
    x = as_payoff(space, payoff)
    engine = _Engine(measure, space, lam)
    u = engine.log_moments(x)
    _, x_new = engine.map_pass(u, x)
    return x_new


def solve_fixed_point(
    measure: WeightingMeasure,
    space: ProbSpace,
    lam: float,
    config: SolverConfig | None = None,
) -> FixedPointResult:
    """Iterate the payoff map from the zero payoff until it settles.

    Iterates are nondecreasing state by state.  Stops when the sup-norm
    step drops to ``tol_payoff``; declares divergence when an exponential
    moment falls below ``divergence_floor`` or the running price exceeds
    its reciprocal, which is the finite-iteration signature of a
    multiplier too small to support a solution.
    """
    cfg = config or SolverConfig()
    engine = _Engine(measure, space, lam)
    log_floor = math.log(cfg.divergence_floor)
    price_ceiling = 1.0 / cfg.divergence_floor
    x = np.zeros(space.n_states)
    u = engine.log_moments(x)
    for it in range(1, cfg.max_iter + 1):
        u, x_new = engine.map_pass(u, x)
        step = float(np.abs(x_new - x).max())
        x = x_new
        if u.min() < log_floor:
            return FixedPointResult(None, True, it, "exponential moment underflow")
        if engine.budget(x) > price_ceiling:
            return FixedPointResult(None, True, it, "price of iterate blew up")
        if step <= cfg.tol_payoff:
            return FixedPointResult(x, False, it, "converged")
    raise ConvergenceError(
        f"fixed point did not converge in {cfg.max_iter} iterations "
        f"(last step {step:.3e}, lam={lam!r})",
        iterations=cfg.max_iter,
    )


# Anderson mixing depth for the accelerated engine.
_AA_DEPTH = 6
_AA_MAX_PASSES = 400
_AA_RTOL = 1e-13


class _GuardedSecant:
    """Bracketed root search for a decreasing function, secant-first.

    Tracks a bracket [lo, hi] with gap values f(lo) > 0 > f(hi) where
    known; proposals are secant points clamped strictly inside the
    bracket, damped toward bisection when one edge goes stale, and plain
    midpoints while an edge value is missing (failed evaluations leave
    edges valueless without losing the bracket).
    """

    def __init__(
        self,
        lo: float,
        hi: float,
        f_lo: float | None = None,
        f_hi: float | None = None,
    ):
        self.lo, self.hi = lo, hi
        self.f_lo, self.f_hi = f_lo, f_hi
        self._side = 0

    def propose(self) -> float:
        lo, hi, f_lo, f_hi = self.lo, self.hi, self.f_lo, self.f_hi
        if f_lo is not None and f_hi is not None and f_lo > 0.0 > f_hi:
            mid = (lo * f_hi - hi * f_lo) / (f_hi - f_lo)
            w = hi - lo
            return min(max(mid, lo + 0.005 * w), hi - 0.005 * w)
        return 0.5 * (lo + hi)

    def update(self, mid: float, gap: float) -> None:
        """Record f(mid) = gap; positive gaps put the root above mid.

        A stale opposite edge is halved, and additionally capped at 100x
        the fresh magnitude: edges sitting on a singular endpoint can
        carry values sixty-plus halvings away from the root scale, and
        the cap collapses that in one move.
        """
        if gap > 0.0:
            self.lo, self.f_lo = mid, gap
            if self._side == 1 and self.f_hi is not None:
                self.f_hi = max(self.f_hi * 0.5, -100.0 * gap)
            self._side = 1
        else:
            self.hi, self.f_hi = mid, gap
            if self._side == -1 and self.f_lo is not None:
                self.f_lo = min(self.f_lo * 0.5, -100.0 * gap)
            self._side = -1

    def fail_low(self, mid: float) -> None:
        """The evaluation at mid failed in the way that marks 'root above'."""
        self.lo, self.f_lo = mid, None
        self._side = 0


def _solve_accelerated(
    engine: _Engine,
    u0: NDArray[np.float64],
    cfg: SolverConfig,
) -> tuple[str, NDArray[np.float64], NDArray[np.float64], int]:
    """Fixed point by Anderson mixing on the log-moment vector.

    Returns (status, log_moments, payoff, passes) with status one of
    "ok", "diverged", "stuck".  An "ok" answer satisfies the defining
    residual max|T(u) - u| <= 1e-13 in log space, checked directly; a
    budget tolerance tighter than 1e-10 pulls this exit down with it so
    price noise stays below what the multiplier search must resolve.
    """
    log_floor = math.log(cfg.divergence_floor)
    rtol = min(_AA_RTOL, 1e-3 * cfg.budget_rtol)
    u = np.minimum(u0, 0.0)
    hist_u: list[NDArray[np.float64]] = []
    hist_f: list[NDArray[np.float64]] = []
    x = np.zeros(engine.p.size)
    for it in range(1, _AA_MAX_PASSES + 1):
        f, x = engine.map_pass(u, x)
        if not np.all(np.isfinite(f)):
            return "diverged", u, x, it
        resid = float(np.abs(f - u).max())
        if resid <= rtol:
            return "ok", f, x, it
        if f.min() < log_floor:
            return "diverged", f, x, it
        hist_u.append(u.copy())
        hist_f.append(f.copy())
        if len(hist_u) > _AA_DEPTH:
            hist_u.pop(0)
            hist_f.pop(0)
        if len(hist_u) == 1:
            u = f
            continue
        F = np.asarray(hist_f)
        res = F - np.asarray(hist_u)
        dres = np.diff(res, axis=0)
        # Ridge-regularized normal equations: the history is tiny (depth
        # x atoms), so this beats a least-squares factorization per pass.
        A = dres @ dres.T
        A[np.diag_indices_from(A)] += 1e-30 + 1e-12 * float(A.max())
        try:
            gamma = np.linalg.solve(A, dres @ res[-1])
            u = F[-1] - gamma @ np.diff(F, axis=0)
        except np.linalg.LinAlgError:
            u = f
        if not np.all(np.isfinite(u)):
            u = f
        u = np.minimum(u, 0.0)
    return "stuck", u, x, _AA_MAX_PASSES


def lambda_search(
    measure: WeightingMeasure,
    space: ProbSpace,
    budget_x: float,
    config: SolverConfig | None = None,
) -> LambdaSearchResult:
    """Shrink a multiplier bracket until the solution's price matches budget_x.

    The price of the optimal payoff decreases continuously in the
    multiplier, from arbitrarily large just above 1/E[rho] down to zero,
    so a bracketed search is reliable.  Multipliers whose iteration diverges
    (or whose price explodes) count as "price too high" and move the lower
    edge.  Exits when the relative price error is within ``budget_rtol``.
    """
    cfg = config or SolverConfig()
    if not (np.isfinite(budget_x) and budget_x > 0.0):
        raise InputError(f"budget must be positive, got {budget_x!r}")
    mean_rho = space.mean_sdf()
    lo = (1.0 + 1e-12) / mean_rho
    hi = 2.0 / mean_rho
    passes = 0
    bisections = 0
    evals: list[tuple[float, float]] = []
    u_warm = np.zeros(measure.n_atoms)

    def run(lam: float) -> tuple[str, NDArray[np.float64], NDArray[np.float64]]:
        nonlocal passes, u_warm
        engine = _Engine(measure, space, lam)
        status, u, x, used = _solve_accelerated(engine, u_warm, cfg)
        passes += used
        if status == "stuck" and space.n_states <= 20_000:
            # Cheap spaces get the rigorous monotone fallback.
            result = solve_fixed_point(measure, space, lam, cfg)
            passes += result.iterations
            if result.diverged:
                status = "diverged"
            else:
                x = result.payoff
                engine2 = _Engine(measure, space, lam)
                u = engine2.log_moments(x)
                status = "ok"
        if status == "ok":
            u_warm = u
        return status, u, x

    # Expand the upper edge until the price falls below the target.
    f_lo: float | None = None
    f_hi: float | None = None
    for _ in range(200):
        status, u, x = run(hi)
        if status == "ok":
            bud = price_fast(space, x)
            evals.append((hi, bud))
            if abs(bud - budget_x) <= cfg.budget_rtol * budget_x:
                return LambdaSearchResult(
                    lambda_star=hi,
                    payoff=x,
                    log_moments=u,
                    iterations=passes,
                    bisections=0,
                    evaluations=evals,
                )
            if bud < budget_x:
                f_hi = bud - budget_x
                break
            lo, f_lo = hi, bud - budget_x
        else:
            lo, f_lo = hi, None
        hi *= 2.0
    else:
        raise ConvergenceError("could not bracket the budget multiplier")

    search = _GuardedSecant(lo, hi, f_lo, f_hi)
    lo_init = lo
    saturation_tried = False
    for bisections in range(1, 301):
        lo, hi = search.lo, search.hi
        if not saturation_tried and lo == lo_init and hi - lo <= 1e-11 * lo:
            # The bracket collapsed onto 1/E[rho] without meeting the
            # budget: a bounded SDF at a large budget.  There the optimum
            # is interior in every state, the marginal-density
            # normalization pins lambda at exactly 1/E[rho], and interior
            # optima form a ray X + c*1, so the shortfall is closed by a
            # uniform shift of the solution at the bracket's lower edge.
            saturation_tried = True
            status, u, x = run(lo)
            if status == "ok":
                bud = price_fast(space, x)
                evals.append((lo, bud))
                if bud < budget_x:
                    engine = _Engine(measure, space, lo)
                    x_flat = x + (budget_x - bud) / mean_rho
                    return LambdaSearchResult(
                        lambda_star=1.0 / mean_rho,
                        payoff=x_flat,
                        log_moments=engine.log_moments(x_flat),
                        iterations=passes,
                        bisections=bisections,
                        evaluations=evals,
                    )
        if hi - lo <= 1e-14 * lo:
            break
        mid = search.propose()
        status, u, x = run(mid)
        if status != "ok":
            search.fail_low(mid)
            continue
        bud = price_fast(space, x)
        evals.append((mid, bud))
        if abs(bud - budget_x) <= cfg.budget_rtol * budget_x:
            return LambdaSearchResult(
                lambda_star=mid,
                payoff=x,
                log_moments=u,
                iterations=passes,
                bisections=bisections,
                evaluations=evals,
            )
        search.update(mid, bud - budget_x)
    raise ConvergenceError(
        f"budget bisection did not meet tolerance {cfg.budget_rtol:g}"
    )


def price_fast(space: ProbSpace, x: NDArray[np.float64]) -> float:
    """Dot-product price used inside search loops (reports use price())."""
    return float((space.probs * space.sdf) @ x)


def solve_risk_min(
    measure: WeightingMeasure,
    space: ProbSpace,
    budget_x: float,
    config: SolverConfig | None = None,
) -> RiskMinReport:
    """Minimize the weighted entropic risk over payoffs of price budget_x."""
    cfg = config or SolverConfig()
    found = lambda_search(measure, space, budget_x, cfg)
    x = found.payoff
    lam = found.lambda_star
    risk_value = weighted_entropic_risk(measure, space, x)
    budget_residual = price(space, x) - budget_x
    grad = risk_gradient(measure, space, x)
    kkt = _kkt_residual(grad, space.sdf, x, lam)
    psi_res = integral_system_residual(measure, space, x, lam).max_residual
    return RiskMinReport(
        payoff=x,
        lambda_star=lam,
        risk_value=risk_value,
        budget_residual=budget_residual,
        kkt_residual=kkt,
        psi_residual=psi_res,
        iterations=found.iterations,
        bisections=found.bisections,
    )


def _kkt_residual(
    grad: NDArray[np.float64],
    rho: NDArray[np.float64],
    x: NDArray[np.float64],
    lam: float,
) -> float:
    """Stationarity defect: gradient + lam*rho >= 0, equality where x > 0."""
    slack = grad + lam * rho
    one_sided = float(np.maximum(-slack, 0.0).max())
    equality = 0.0
    active = x > _ACTIVE_EPS
    if active.any():
        equality = float(np.abs(slack[active]).max())
    return max(one_sided, equality)


@dataclass(frozen=True)
class IntegralCheck:
    residuals: NDArray[np.float64]
    max_residual: float


def integral_system_residual(
    measure: WeightingMeasure,
    space: ProbSpace,
    payoff: ArrayLike,
    lam: float,
) -> IntegralCheck:
    """Consistency of the moment system on a discrete space, by exact sums.

    With F the SDF's step CDF, each moment must equal
    1 - a * integral_0^inf exp(-a y) F(curve(y)/lam) dy.  On a discrete
    space the integrand is piecewise exponential with kinks exactly where
    the curve crosses lam times an SDF value, so the integral collapses to
    a finite sum over those thresholds, located with the curve's inverse.
    """
    x = as_payoff(space, payoff)
    curve = RiskDensityCurve.from_payoff(measure, space, x)
    thresholds = np.asarray(curve.inverse(lam * space.sdf))
    clipped = np.maximum(thresholds, 0.0)
    moments = np.exp(curve.log_moments)
    residuals = np.empty(measure.n_atoms)
    for j, a in enumerate(measure.atoms):
        integral_sum = math.fsum(space.probs * (1.0 - np.exp(-a * clipped)))
        residuals[j] = abs(moments[j] - (1.0 - integral_sum))
    return IntegralCheck(residuals=residuals, max_residual=float(residuals.max()))


def integral_system_residual_lognormal(
    measure: WeightingMeasure,
    model: LogNormalSDF,
    log_moments: ArrayLike,
    lam: float,
) -> IntegralCheck:
    """Same consistency check against a continuum SDF, by adaptive quadrature."""
    lm = np.atleast_1d(np.asarray(log_moments, dtype=np.float64))
    curve = RiskDensityCurve(measure, lm)
    moments = np.exp(lm)
    residuals = np.empty(measure.n_atoms)
    for j, a in enumerate(measure.atoms):
        def integrand(y: float) -> float:
            return math.exp(-a * y) * float(model.cdf(curve.value(y) / lam))

        val, _ = integrate.quad(integrand, 0.0, np.inf, limit=200)
        residuals[j] = abs(moments[j] - (1.0 - a * val))
    return IntegralCheck(residuals=residuals, max_residual=float(residuals.max()))


@dataclass(frozen=True)
class EntropicRiskMinSolution:
    """Closed-form single-atom solution for a log-normal SDF.

    The optimal payoff is (-(log c1 + log rho)/a)^+ with c1 fixed by the
    price constraint; everything reduces to normal CDF evaluations.
    """

    a: float
    budget: float
    model: LogNormalSDF
    c1: float
    moment: float
    lambda_star: float
    gamma1: float

    def payoff(self, rho: ArrayLike) -> NDArray[np.float64] | float:
        r = np.asarray(rho, dtype=np.float64)
        out = np.maximum(0.0, -(math.log(self.c1) + np.log(r)) / self.a)
        if r.ndim == 0:
            return float(out)
        return out

    def on_space(self, space: ProbSpace) -> NDArray[np.float64]:
        return np.asarray(self.payoff(space.sdf))


def _normal_pdf(z: float) -> float:
    return math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def entropic_risk_min_closed_form(
    a: float, budget_x: float, model: LogNormalSDF
) -> EntropicRiskMinSolution:
    """Solve the single-atom problem on the log-normal continuum exactly.

    Both the price of the candidate payoff and its exponential moment have
    closed forms in the normal CDF (derived by completing the square under
    the tilt by rho), leaving a one-dimensional root solve in log c1.
    """
    if not (np.isfinite(a) and a > 0.0):
        raise InputError(f"aversion level must be positive, got {a!r}")
    if not (np.isfinite(budget_x) and budget_x > 0.0):
        raise InputError(f"budget must be positive, got {budget_x!r}")
    b, sigma = model.b, model.sigma
    mean_rho = model.mean()

    def price_of(t: float) -> float:
        z0 = (-t - b) / sigma
        return (mean_rho / a) * (
            (-t - b - sigma * sigma) * float(ndtr(z0 - sigma))
            + sigma * _normal_pdf(z0 - sigma)
        )

    lo, hi = -1.0, 1.0
    for _ in range(200):
        if price_of(lo) > budget_x:
            break
        lo *= 2.0
    for _ in range(200):
        if price_of(hi) < budget_x:
            break
        hi *= 2.0
    t_star = optimize.brentq(lambda t: price_of(t) - budget_x, lo, hi, xtol=1e-14)
    z0 = (-t_star - b) / sigma
    moment = math.exp(t_star) * mean_rho * float(ndtr(z0 - sigma)) + float(ndtr(-z0))
    gamma1 = math.log(moment) / a
    c1 = math.exp(t_star)
    return EntropicRiskMinSolution(
        a=a,
        budget=budget_x,
        model=model,
        c1=c1,
        moment=moment,
        lambda_star=c1 / moment,
        gamma1=gamma1,
    )

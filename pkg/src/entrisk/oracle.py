"""Brute-force reference solvers and optimality checkers on tiny spaces.

Everything here trades speed for independence: no fixed-point transforms
and no density-curve inversions, just projected first-order methods and
pair transfers on the raw constrained programs.  Convexity makes their
answers global, so they certify the production solvers on spaces small
enough to debug by hand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import ConvergenceError, InfeasibleRiskError, InputError
from .eumax import Utility
from .measure import WeightingMeasure, risk_gradient, weighted_entropic_risk
from .riskmin import _GuardedSecant
from .statespace import ProbSpace, as_payoff

__all__ = [
    "OracleConfig",
    "RandomInstance",
    "brute_force_risk_min",
    "brute_force_eu_max",
    "kkt_check_riskmin",
    "kkt_check_eumax",
    "random_instance",
]

_MAX_ORACLE_STATES = 8


@dataclass(frozen=True)
class OracleConfig:
    step_tol: float = 3e-8
    max_refine: int = 200

    def __post_init__(self) -> None:
        if self.step_tol <= 0:
            raise InputError("step_tol must be positive")
        if self.max_refine < 1:
            raise InputError("max_refine must be at least 1")


def _check_small(space: ProbSpace) -> None:
    if space.n_states > _MAX_ORACLE_STATES:
        raise InputError(
            f"oracle handles at most {_MAX_ORACLE_STATES} states, "
            f"got {space.n_states}"
        )


def _risk_eval(measure: WeightingMeasure, space: ProbSpace):
    """Bind measure and space into one (value, gradient) evaluator.

    The refinement loops below call this millions of times on 8-vectors,
    so it skips every check the public functions perform.  Work is shifted
    by min(x), after which the shift cancels in the gradient quotient.
    """
    a = measure.atoms
    w = measure.weights
    w_over_a = w / a
    w_sum = float(w.sum())
    p = space.probs

    def ev(x: NDArray[np.float64]) -> tuple[float, NDArray[np.float64]]:
        shift = x.min()
        e = np.exp(-np.outer(x - shift, a))
        m = p @ e
        value = float(w_over_a @ np.log(m)) - shift * w_sum
        return value, -(e @ (w / m))

    return ev


def _pair_line(
    measure: WeightingMeasure,
    space: ProbSpace,
    x: NDArray[np.float64],
    i: int,
    j: int,
):
    """Marginal-density values for the moving pair along a transfer line.

    Only coordinates i and j travel, so the resting part of each moment
    is frozen once; per point the two travelling exponentials are redone
    and the shift is re-anchored at the running minimum, which keeps the
    moments away from underflow however far the line walks.
    """
    a = measure.atoms
    w = measure.weights
    p = space.probs
    keep = np.ones(x.size, dtype=bool)
    keep[i] = keep[j] = False
    rest = x[keep]
    if rest.size:
        base_shift = float(rest.min())
        m_rest = p[keep] @ np.exp(-np.outer(rest - base_shift, a))
    else:
        base_shift = math.inf
        m_rest = np.zeros_like(a)
    pi, pj = p[i], p[j]

    def at(xi: float, xj: float) -> tuple[float, float]:
        shift = min(xi, xj, base_shift)
        ei = np.exp((shift - xi) * a)
        ej = np.exp((shift - xj) * a)
        if rest.size:
            m = m_rest * np.exp((shift - base_shift) * a) + pi * ei + pj * ej
        else:
            m = pi * ei + pj * ej
        return -float(w @ (ei / m)), -float(w @ (ej / m))

    return at


def _pair_root(d_of, lo: float, hi: float, d_lo: float, d_hi: float, eps: float) -> float:
    """Root of a decreasing pair derivative with d(lo) > 0 > d(hi).

    Secant proposals inside the bracket; exits when proposals stall or
    the bracket is resolved to eps (floored at machine width).
    """
    span = _GuardedSecant(lo, hi, d_lo, d_hi)
    prev = math.inf
    for _ in range(80):
        mid = span.propose()
        tol = eps + 1e-16 * abs(mid)
        if abs(mid - prev) <= tol:
            break
        d = d_of(mid)
        if d == 0.0:
            return mid
        span.update(mid, d)
        prev = mid
        if span.hi - span.lo <= tol:
            break
    return 0.5 * (span.lo + span.hi)


def _project_budget(
    x: NDArray[np.float64],
    cost: NDArray[np.float64],
    budget: float,
    floor: float = 0.0,
) -> NDArray[np.float64]:
    """Euclidean projection onto {y >= floor, cost . y = budget}.

    The projection has the form max(floor, x - theta * cost); walking
    theta up through the sorted flooring breakpoints finds the segment
    where the budget equation is linear and solves it exactly.
    """
    edges = (x - floor) / cost
    order = np.argsort(edges)
    cx = float(cost @ x)
    cc = float(cost @ cost)
    from_floor = 0.0
    theta = (cx - budget) / cc
    for k in order:
        if theta <= edges[k]:
            break
        cx -= float(cost[k] * x[k])
        cc -= float(cost[k] * cost[k])
        from_floor += float(cost[k]) * floor
        if cc <= 0.0:
            theta = float(edges[k])
            break
        theta = (cx + from_floor - budget) / cc
    y = np.maximum(floor, x - theta * cost)
    # One exact rescale of the free coordinates kills the bisection dust.
    free = y > floor
    if free.any():
        spent_floor = float(cost[~free] @ y[~free]) if (~free).any() else 0.0
        scale = (budget - spent_floor) / float(cost[free] @ y[free])
        y[free] *= scale
    return y


def brute_force_risk_min(
    measure: WeightingMeasure,
    space: ProbSpace,
    budget_x: float,
    config: OracleConfig | None = None,
) -> NDArray[np.float64]:
    """Minimize the risk over the budget slice by projected descent.

    A projected-gradient phase with adaptive step finds the neighborhood;
    pairwise budget-preserving transfers, each solved by bisecting the
    directional derivative, then grind the answer down to step_tol.
    """
    cfg = config or OracleConfig()
    _check_small(space)
    if not (np.isfinite(budget_x) and budget_x > 0.0):
        raise InputError(f"budget must be positive, got {budget_x!r}")
    cost = space.probs * space.sdf
    ev = _risk_eval(measure, space)
    x = _project_budget(
        np.full(space.n_states, budget_x / float(cost.sum())), cost, budget_x
    )

    step = 1.0
    h, g = ev(x)
    for _ in range(4000):
        gc = space.probs * g
        moved = False
        while step > 1e-14:
            trial = _project_budget(x - step * gc, cost, budget_x)
            h_trial, g_trial = ev(trial)
            if h_trial < h:
                x, h, g = trial, h_trial, g_trial
                step *= 2.0
                moved = True
                break
            step *= 0.5
        if not moved:
            break

    x = _pairwise_risk_refine(measure, space, x, cost, cfg)
    return x


def _pairwise_risk_refine(
    measure: WeightingMeasure,
    space: ProbSpace,
    x: NDArray[np.float64],
    cost: NDArray[np.float64],
    cfg: OracleConfig,
) -> NDArray[np.float64]:
    """Cyclic budget-preserving pair transfers down to step_tol.

    Along a transfer line the risk is convex, so its directional
    derivative (h'_i / rho_i - h'_j / rho_j after the chain rule) is
    increasing; its sign at the current point picks the half-line that
    holds the optimum, and secant steps inside the sign bracket find it.
    One gradient evaluation per sweep screens which pairs need work.
    """
    n = space.n_states
    rho = space.sdf
    x = x.copy()
    ev = _risk_eval(measure, space)

    for _ in range(cfg.max_refine):
        _, g0 = ev(x)
        slope0 = g0 / rho
        largest = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                # Negated so the derivative decreases along the line.
                d0 = slope0[j] - slope0[i]
                if abs(d0) <= 1e-11:
                    continue
                line = _pair_line(measure, space, x, i, j)
                eps = 1e-2 * cfg.step_tol * min(cost[i], cost[j])

                def d_of(delta: float) -> float:
                    xi = max(x[i] + delta / cost[i], 0.0)
                    xj = max(x[j] - delta / cost[j], 0.0)
                    gi, gj = line(xi, xj)
                    return gj / rho[j] - gi / rho[i]

                if d0 > 0.0:
                    hi = x[j] * cost[j]
                    if hi <= 0.0:
                        continue
                    d_hi = d_of(hi)
                    if d_hi >= 0.0:
                        best = hi
                    else:
                        best = _pair_root(d_of, 0.0, hi, d0, d_hi, eps)
                else:
                    lo = -x[i] * cost[i]
                    if lo >= 0.0:
                        continue
                    d_lo = d_of(lo)
                    if d_lo <= 0.0:
                        best = lo
                    else:
                        best = _pair_root(d_of, lo, 0.0, d_lo, d0, eps)
                if best != 0.0:
                    x[i] = max(x[i] + best / cost[i], 0.0)
                    x[j] = max(x[j] - best / cost[j], 0.0)
                    _, g0 = ev(x)
                    slope0 = g0 / rho
                    largest = max(largest, abs(best / cost[i]), abs(best / cost[j]))
        if largest <= cfg.step_tol:
            return x
    raise ConvergenceError(
        "pairwise refinement did not settle", iterations=cfg.max_refine
    )


def _oracle_unconstrained(
    utility: Utility,
    space: ProbSpace,
    budget_x: float,
) -> tuple[NDArray[np.float64], float]:
    """Price-only optimum by scalar bisection, kept separate on purpose."""
    cost = space.probs * space.sdf

    def priced(lam: float) -> float:
        return float(cost @ np.asarray(utility.inverse_marginal(lam * space.sdf)))

    lo = hi = 1.0 / budget_x
    while priced(lo) <= budget_x:
        lo *= 0.5
    while priced(hi) >= budget_x:
        hi *= 2.0
    for _ in range(200):
        lam = 0.5 * (lo + hi)
        if priced(lam) > budget_x:
            lo = lam
        else:
            hi = lam
    lam = 0.5 * (lo + hi)
    return np.asarray(utility.inverse_marginal(lam * space.sdf)), lam


def brute_force_eu_max(
    measure: WeightingMeasure,
    space: ProbSpace,
    utility: Utility,
    budget_x: float,
    gamma: float,
    config: OracleConfig | None = None,
) -> NDArray[np.float64]:
    """Maximize expected utility on the budget slice with the risk pinned.

    Phase one is penalized projected ascent: the squared risk violation is
    divided by a weight walked down from 1e2 to 1e-2, halving each stage,
    warm-started.  Driving the weight further makes the penalty surface
    too stiff for first-order steps, so phase two switches to the exact
    multiplier: at fixed mu the Lagrangian E[U] - mu*h is smooth and
    strictly concave on the slice, pair transfers settle it quickly, and
    the attained risk decreases in mu, so bisecting mu pins the risk
    equality to ~1e-10.
    """
    cfg = config or OracleConfig()
    _check_small(space)
    gamma1 = weighted_entropic_risk(
        measure, space, brute_force_risk_min(measure, space, budget_x, cfg)
    )
    x_free, _ = _oracle_unconstrained(utility, space, budget_x)
    gamma2 = weighted_entropic_risk(measure, space, x_free)
    if not (gamma1 < gamma < gamma2):
        raise InfeasibleRiskError(gamma, gamma1, gamma2)

    cost = space.probs * space.sdf
    p = space.probs
    floor = 1e-10
    ev = _risk_eval(measure, space)
    x = _project_budget(x_free, cost, budget_x, floor)

    def ascend(weight: float, x0: NDArray[np.float64]) -> NDArray[np.float64]:
        x_cur = x0
        step = 0.1

        def objective(y: NDArray[np.float64]) -> tuple[float, float, NDArray[np.float64]]:
            h, g = ev(y)
            r = h - gamma
            val = float(p @ utility.value(y)) - r * r / (2.0 * weight)
            return val, r, g

        f_cur, r_cur, g_cur = objective(x_cur)
        for _ in range(120):
            g = p * (utility.marginal(x_cur) - (r_cur / weight) * g_cur)
            moved = False
            while step > 1e-15:
                trial = _project_budget(x_cur + step * g, cost, budget_x, floor)
                f_trial, r_trial, g_trial = objective(trial)
                if f_trial > f_cur:
                    x_cur, f_cur, r_cur, g_cur = trial, f_trial, r_trial, g_trial
                    step *= 2.0
                    moved = True
                    break
                step *= 0.5
            if not moved:
                break
        return x_cur

    weight = 1e2
    while weight >= 1e-2:
        x = ascend(weight, x)
        weight *= 0.5

    # Phase two.  r(0) = gamma2 - gamma > 0, and doubling finds the other
    # edge; every inner solve warm-starts from the previous payoff.  The
    # attained risk carries position noise near the inner tolerance, so
    # loose solves steer only while the gap is comfortably above it; the
    # endgame reverts to tight solves, whose clean values let plain
    # secant-Newton steps close the last six orders.
    loose, tight = 1e-9, 1e-12
    coarse = 1e-6

    def solve_at(mu: float, tol: float) -> tuple[NDArray[np.float64], float]:
        y = _pairwise_lagrangian(
            measure, space, utility, mu, x, cost, budget_x, cfg, tol
        )
        return y, ev(y)[0]

    h_now, _ = ev(x)
    # The last penalty stage ran at 2 * weight, and its multiplier
    # estimate residual / weight lands near the true mu.
    mu = max((h_now - gamma) / (2.0 * weight), 1e-3)
    mu_prev, f_prev = 0.0, gamma2 - gamma
    mu_lo, f_lo = mu_prev, f_prev
    slope = None
    f_hi: float | None = None
    for _ in range(60):
        x, h_now = solve_at(mu, loose)
        f = h_now - gamma
        if mu != mu_prev and f != f_prev:
            slope = (f - f_prev) / (mu - mu_prev)
        mu_prev, f_prev = mu, f
        if abs(f) <= coarse:
            break
        if f < 0.0:
            mu_hi, f_hi = mu, f
            break
        mu_lo, f_lo = mu, f
        mu *= 2.0
    else:
        raise ConvergenceError("could not bracket the oracle risk multiplier")

    if abs(f_prev) > coarse:
        search = _GuardedSecant(mu_lo, mu_hi, f_lo, f_hi)
        for _ in range(200):
            mu = search.propose()
            x, h_now = solve_at(mu, loose)
            f = h_now - gamma
            if mu != mu_prev and f != f_prev:
                slope = (f - f_prev) / (mu - mu_prev)
            mu_prev, f_prev = mu, f
            if abs(f) <= coarse:
                break
            search.update(mu, f)
            if search.hi - search.lo <= 1e-15 * max(search.hi, 1.0):
                break

    for _ in range(60):
        x, h_now = solve_at(mu, tight)
        f = h_now - gamma
        if abs(f) <= 1e-10:
            return x
        if mu != mu_prev and f != f_prev:
            slope = (f - f_prev) / (mu - mu_prev)
        mu_prev, f_prev = mu, f
        if slope is None or slope >= 0.0:
            slope = -max(abs(f), 1e-6)
        mu = min(max(mu - f / slope, 0.25 * mu), 4.0 * mu)
    raise ConvergenceError("risk equality not met by the oracle ascent")


def _pairwise_lagrangian(
    measure: WeightingMeasure,
    space: ProbSpace,
    utility: Utility,
    mu: float,
    x: NDArray[np.float64],
    cost: NDArray[np.float64],
    budget_x: float,
    cfg: OracleConfig,
    step_tol: float,
) -> NDArray[np.float64]:
    """Maximize E[U] - mu * h on the budget slice.

    Projected-gradient ascent with an adaptive step makes the large,
    fully coupled moves; cyclic pair transfers finish the job.  The
    objective is concave along each budget-neutral line, so the
    directional slope decreases in the transfer; its sign at the current
    point picks the half-line holding the optimum and secant steps
    inside the sign bracket find it.  Slopes for every pair come from
    one evaluation, refreshed after each accepted move, and only
    unbalanced pairs do any line work.
    """
    n = space.n_states
    rho = space.sdf
    p = space.probs
    floor = 1e-10
    ev = _risk_eval(measure, space)

    def objective(y: NDArray[np.float64]) -> tuple[float, NDArray[np.float64]]:
        h, g = ev(y)
        return float(p @ utility.value(y)) - mu * h, g

    x = x.copy()
    f_cur, g_cur = objective(x)
    step = 0.1
    for _ in range(150):
        g = p * (utility.marginal(x) - mu * g_cur)
        moved = False
        while step > 1e-15:
            trial = _project_budget(x + step * g, cost, budget_x, floor)
            f_trial, g_trial = objective(trial)
            if f_trial > f_cur:
                x, f_cur, g_cur = trial, f_trial, g_trial
                step *= 2.0
                moved = True
                break
            step *= 0.5
        if not moved:
            break

    def slopes(y: NDArray[np.float64]) -> NDArray[np.float64]:
        _, g = ev(y)
        return (utility.marginal(y) - mu * g) / rho

    for _ in range(cfg.max_refine):
        s0 = slopes(x)
        largest = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                d0 = s0[i] - s0[j]
                if abs(d0) <= 1e-12:
                    continue
                line = _pair_line(measure, space, x, i, j)
                eps = 1e-2 * step_tol * min(cost[i], cost[j])

                def d_of(delta: float) -> float:
                    xi = x[i] + delta / cost[i]
                    xj = x[j] - delta / cost[j]
                    gi, gj = line(xi, xj)
                    return (
                        float(utility.marginal(xi) - mu * gi) / rho[i]
                        - float(utility.marginal(xj) - mu * gj) / rho[j]
                    )

                # Both coordinates stay strictly positive for the utility.
                if d0 > 0.0:
                    hi = (x[j] - 1e-12) * cost[j]
                    if hi <= 0.0:
                        continue
                    d_hi = d_of(hi)
                    if d_hi >= 0.0:
                        best = hi
                    else:
                        best = _pair_root(d_of, 0.0, hi, d0, d_hi, eps)
                else:
                    lo = (1e-12 - x[i]) * cost[i]
                    if lo >= 0.0:
                        continue
                    d_lo = d_of(lo)
                    if d_lo <= 0.0:
                        best = lo
                    else:
                        best = _pair_root(d_of, lo, 0.0, d_lo, d0, eps)
                if best != 0.0:
                    x[i] += best / cost[i]
                    x[j] -= best / cost[j]
                    s0 = slopes(x)
                    largest = max(
                        largest, abs(best / cost[i]), abs(best / cost[j])
                    )
        if largest <= step_tol:
            return x
    raise ConvergenceError(
        "Lagrangian pair transfers did not settle", iterations=cfg.max_refine
    )


def kkt_check_riskmin(
    measure: WeightingMeasure,
    space: ProbSpace,
    payoff,
    lam: float,
) -> float:
    """Optimality defect of the risk minimizer candidate.

    The marginal condition says gradient + lam * rho is nonnegative
    everywhere and zero wherever the payoff is strictly positive; the
    returned number is the worst violation of either part.
    """
    x = as_payoff(space, payoff)
    slack = risk_gradient(measure, space, x) + lam * space.sdf
    one_sided = float(np.maximum(-slack, 0.0).max())
    active = x > 1e-9
    equality = float(np.abs(slack[active]).max()) if active.any() else 0.0
    return max(one_sided, equality)


def kkt_check_eumax(
    measure: WeightingMeasure,
    space: ProbSpace,
    utility: Utility,
    payoff,
    mu: float,
    lam: float,
) -> float:
    """Worst-state defect of marginal utility - mu * gradient - lam * rho."""
    x = as_payoff(space, payoff)
    if x.min() <= 0.0:
        raise InputError("payoff must be strictly positive for this check")
    res = (
        np.asarray(utility.marginal(x))
        - mu * risk_gradient(measure, space, x)
        - lam * space.sdf
    )
    return float(np.abs(res).max())


@dataclass(frozen=True)
class RandomInstance:
    """One seeded test problem: market, measure, budget."""

    space: ProbSpace
    measure: WeightingMeasure
    budget: float


def random_instance(rng: np.random.Generator) -> RandomInstance:
    """Draw a small well-conditioned problem (2-8 states, 1-5 atoms).

    Probabilities are kept off the floor and SDF values spread over about
    one order of magnitude, so every instance is solvable at tight
    tolerances without ill-conditioning theatrics.
    """
    n = int(rng.integers(2, _MAX_ORACLE_STATES + 1))
    while True:
        probs = rng.dirichlet(np.full(n, 2.0))
        if probs.min() >= 0.02:
            break
    rho = np.sort(np.exp(rng.normal(-0.2, 0.5, size=n)))
    while np.diff(rho).min() < 1e-3:
        rho = np.sort(np.exp(rng.normal(-0.2, 0.5, size=n)))
    k = int(rng.integers(1, 6))
    atoms = np.sort(rng.uniform(0.4, 4.0, size=k))
    while k > 1 and np.diff(atoms).min() < 1e-2:
        atoms = np.sort(rng.uniform(0.4, 4.0, size=k))
    while True:
        weights = rng.dirichlet(np.full(k, 2.0))
        if weights.min() >= 0.05:
            break
    space = ProbSpace(probs, rho)
    measure = WeightingMeasure(atoms, weights)
    budget = float(rng.uniform(0.5, 2.0))
    return RandomInstance(space=space, measure=measure, budget=budget)

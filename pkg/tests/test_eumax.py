"""Utility maximization under a risk cap: transforms, multipliers, closed form."""

import math

import numpy as np
import pytest

from entrisk import (
    InfeasibleRiskError,
    InputError,
    LogNormalSDF,
    LogUtility,
    PowerUtility,
    ProbSpace,
    SolverConfig,
    WeightingMeasure,
    entropic_eu_closed_form,
    expectation,
    fixed_point_map_eu,
    lambda_search_eu,
    price,
    random_instance,
    single_crossing_count,
    solve_eu_max,
    solve_fixed_point_eu,
    solve_risk_min,
    solve_unconstrained,
    weighted_entropic_risk,
)

FOUR_STATE = ProbSpace([0.25, 0.25, 0.3, 0.2], [0.6, 0.9, 1.1, 1.5])
ATOM1 = WeightingMeasure.single(1.0)
MIXED = WeightingMeasure([1.0, 3.0], [0.6, 0.4])


class TestUtilities:
    def test_log_utility(self):
        u = LogUtility()
        y = np.array([0.5, 1.0, 4.0])
        assert np.allclose(u.value(y), np.log(y), atol=0)
        assert np.allclose(u.marginal(y), 1.0 / y, atol=0)
        assert np.allclose(u.inverse_marginal(u.marginal(y)), y, atol=1e-15)
        assert np.allclose(u.marginal_slope(y), -1.0 / y**2, atol=0)

    def test_power_utility(self):
        u = PowerUtility(2.0)
        y = np.array([0.25, 1.0, 9.0])
        assert np.allclose(u.value(y), -1.0 / y, atol=1e-15)
        assert np.allclose(u.marginal(y), y**-2.0, atol=0)
        assert np.allclose(u.inverse_marginal(y), y**-0.5, atol=0)
        z = u.marginal(y)
        assert np.allclose(u.inverse_marginal(z), y, atol=1e-12)

    def test_power_utility_validation(self):
        with pytest.raises(InputError):
            PowerUtility(1.0)
        with pytest.raises(InputError):
            PowerUtility(0.0)
        with pytest.raises(InputError):
            PowerUtility(-2.0)
        PowerUtility(0.5)  # fractional aversion is fine


class TestUnconstrained:
    def test_log_utility_is_budget_over_rho(self):
        sol = solve_unconstrained(LogUtility(), FOUR_STATE, 1.3)
        assert np.abs(sol.payoff - 1.3 / FOUR_STATE.sdf).max() < 1e-6
        assert sol.lambda_star == pytest.approx(1.0 / 1.3, rel=1e-6)
        want_eu = expectation(FOUR_STATE, np.log(1.3 / FOUR_STATE.sdf))
        assert sol.eu_value == pytest.approx(want_eu, abs=1e-6)

    def test_power_utility_closed_multiplier(self):
        # lam = (E[sqrt(rho)] / x)^2 makes E[rho (lam rho)^(-1/2)] = x
        budget = 0.8
        sol = solve_unconstrained(PowerUtility(2.0), FOUR_STATE, budget)
        lam_want = (expectation(FOUR_STATE, np.sqrt(FOUR_STATE.sdf)) / budget) ** 2
        assert sol.lambda_star == pytest.approx(lam_want, rel=1e-7)
        want = (sol.lambda_star * FOUR_STATE.sdf) ** -0.5
        assert np.abs(sol.payoff - want).max() < 1e-12
        assert abs(price(FOUR_STATE, sol.payoff) - budget) <= 1e-8 * budget

    def test_rejects_bad_budget(self):
        with pytest.raises(InputError):
            solve_unconstrained(LogUtility(), FOUR_STATE, 0.0)


class TestTransform:
    def test_zero_risk_multiplier_is_marginal_inversion(self):
        sp = ProbSpace([1.0], [1.0])
        lam = 2.5
        got = fixed_point_map_eu(ATOM1, sp, LogUtility(), np.zeros(1), 0.0, lam)
        assert got[0] == pytest.approx(1.0 / lam, abs=1e-12)

    def test_output_strictly_positive(self):
        rng = np.random.default_rng(41)
        for _ in range(10):
            inst = random_instance(rng)
            x = rng.uniform(0.0, 2.0, inst.space.n_states)
            got = fixed_point_map_eu(
                inst.measure, inst.space, LogUtility(), x, 0.5, 2.0
            )
            assert np.all(got > 0.0)

    def test_monotone_in_argument(self):
        rng = np.random.default_rng(42)
        for _ in range(15):
            inst = random_instance(rng)
            n = inst.space.n_states
            x2 = rng.uniform(0.0, 2.0, n)
            x1 = x2 + rng.uniform(0.0, 1.0, n)
            mu = float(rng.uniform(0.1, 2.0))
            lam = (mu + 1.0) / inst.space.mean_sdf()
            t1 = fixed_point_map_eu(inst.measure, inst.space, LogUtility(), x1, mu, lam)
            t2 = fixed_point_map_eu(inst.measure, inst.space, LogUtility(), x2, mu, lam)
            assert np.all(t1 >= t2 - 1e-12)


class TestSolveFixedPointEU:
    def test_fixed_point_meets_state_equations(self):
        mu, lam = 0.7, 2.0
        res = solve_fixed_point_eu(MIXED, FOUR_STATE, LogUtility(), mu, lam)
        assert res.converged
        x = res.payoff
        assert np.all(x > 0.0)
        # the settled payoff solves marginal(y) + mu * curve(y) = lam * rho
        # against the curve built from its own moments
        from entrisk import RiskDensityCurve

        curve = RiskDensityCurve.from_payoff(MIXED, FOUR_STATE, x)
        lhs = 1.0 / x + mu * np.asarray(curve.value(x))
        assert np.abs(lhs - lam * FOUR_STATE.sdf).max() < 1e-8

    def test_iterates_climb(self):
        mu, lam = 0.5, 1.8
        x = np.zeros(4)
        for _ in range(60):
            x_next = fixed_point_map_eu(MIXED, FOUR_STATE, LogUtility(), x, mu, lam)
            assert np.all(x_next >= x - 1e-13)
            x = x_next

    def test_divergence_below_floor(self):
        mu = 1.2
        lam_bad = 0.8 * mu / FOUR_STATE.mean_sdf()
        res = solve_fixed_point_eu(MIXED, FOUR_STATE, LogUtility(), mu, lam_bad)
        assert res.diverged
        assert res.payoff is None


class TestLambdaSearchEU:
    def test_budget_binds(self):
        rng = np.random.default_rng(43)
        for _ in range(8):
            inst = random_instance(rng)
            mu = float(rng.uniform(0.05, 1.5))
            found = lambda_search_eu(
                inst.measure, inst.space, LogUtility(), mu, inst.budget
            )
            bud = price(inst.space, found.payoff)
            assert abs(bud - inst.budget) <= 1e-8 * inst.budget
            assert found.lambda_star > mu / inst.space.mean_sdf()

    def test_vanishing_risk_multiplier_recovers_unconstrained(self):
        budget = 1.1
        free = solve_unconstrained(LogUtility(), FOUR_STATE, budget)
        found = lambda_search_eu(MIXED, FOUR_STATE, LogUtility(), 1e-8, budget)
        assert np.abs(found.payoff - free.payoff).max() < 1e-4


class TestSolveEUMax:
    def _band(self, measure, space, utility, budget):
        g1 = solve_risk_min(measure, space, budget).risk_value
        free = solve_unconstrained(utility, space, budget)
        g2 = weighted_entropic_risk(measure, space, free.payoff)
        return g1, g2

    def test_infeasible_risk_budget_raises_with_bounds(self):
        g1, g2 = self._band(MIXED, FOUR_STATE, LogUtility(), 1.0)
        with pytest.raises(InfeasibleRiskError) as err:
            solve_eu_max(MIXED, FOUR_STATE, LogUtility(), 1.0, g1 - 0.01)
        assert err.value.gamma1 == pytest.approx(g1, abs=1e-9)
        assert err.value.gamma2 == pytest.approx(g2, abs=1e-9)

    def test_risk_floor_returns_the_risk_minimizer(self):
        g1, _ = self._band(MIXED, FOUR_STATE, LogUtility(), 1.0)
        report = solve_eu_max(MIXED, FOUR_STATE, LogUtility(), 1.0, g1)
        assert report.boundary == "gamma1"
        assert report.mu_star == math.inf
        riskmin = solve_risk_min(MIXED, FOUR_STATE, 1.0)
        assert np.abs(report.payoff - riskmin.payoff).max() < 1e-12

    def test_slack_cap_returns_unconstrained(self):
        report = solve_eu_max(MIXED, FOUR_STATE, LogUtility(), 1.0, 0.0)
        assert report.boundary == "gamma2"
        assert report.mu_star == 0.0
        free = solve_unconstrained(LogUtility(), FOUR_STATE, 1.0)
        assert np.abs(report.payoff - free.payoff).max() < 1e-12
        assert report.kkt_residual <= 1e-8

    def test_interior_solution(self):
        g1, g2 = self._band(MIXED, FOUR_STATE, LogUtility(), 1.0)
        gamma = 0.35 * g1 + 0.65 * g2
        report = solve_eu_max(MIXED, FOUR_STATE, LogUtility(), 1.0, gamma)
        assert report.boundary == "interior"
        assert np.all(report.payoff > 0.0)
        assert np.all(np.diff(report.payoff) <= 1e-12)  # nonincreasing in rho
        assert abs(report.budget_residual) <= 1e-8
        assert abs(report.risk_residual) <= 1e-6
        assert report.kkt_residual <= 1e-8
        assert report.mu_star > 0.0
        assert g1 < report.risk_value < g2

    def test_interior_solution_power_utility(self):
        utility = PowerUtility(1.7)
        g1, g2 = self._band(MIXED, FOUR_STATE, utility, 0.9)
        gamma = 0.5 * (g1 + g2)
        report = solve_eu_max(MIXED, FOUR_STATE, utility, 0.9, gamma)
        assert report.boundary == "interior"
        assert abs(report.risk_residual) <= 1e-6
        assert report.kkt_residual <= 1e-8

    def test_achieved_risk_decreasing_in_risk_multiplier(self):
        budget = 1.0
        g1, g2 = self._band(MIXED, FOUR_STATE, LogUtility(), budget)
        mus = [0.01, 0.1, 0.5, 2.0, 8.0, 32.0]
        risks = []
        for mu in mus:
            found = lambda_search_eu(MIXED, FOUR_STATE, LogUtility(), mu, budget)
            risks.append(weighted_entropic_risk(MIXED, FOUR_STATE, found.payoff))
        assert np.all(np.diff(risks) < 0.0)
        assert abs(risks[0] - g2) < 1e-3  # small mu: cap nearly slack
        assert g1 - 1e-9 < risks[-1] < g1 + 0.05  # large mu: near the floor

    def test_value_increasing_and_concave_in_cap(self):
        budget = 1.0
        g1, g2 = self._band(MIXED, FOUR_STATE, LogUtility(), budget)
        grid = np.linspace(g1 + 0.02 * (g2 - g1), g2 - 0.02 * (g2 - g1), 5)
        vals = [
            solve_eu_max(MIXED, FOUR_STATE, LogUtility(), budget, float(g)).eu_value
            for g in grid
        ]
        free = solve_unconstrained(LogUtility(), FOUR_STATE, budget)
        assert np.all(np.diff(vals) > 0.0)
        assert vals[-1] <= free.eu_value + 1e-12
        for i in range(1, len(grid) - 1):
            assert vals[i] >= 0.5 * (vals[i - 1] + vals[i + 1]) - 1e-9

    def test_rejects_nonfinite_gamma(self):
        with pytest.raises(InputError):
            solve_eu_max(MIXED, FOUR_STATE, LogUtility(), 1.0, math.nan)


class TestClosedFormEU:
    MODEL = LogNormalSDF(-0.5, 1.0)

    def test_multiplier_equations_close(self):
        sol = entropic_eu_closed_form(2.0, -1.12, 1.0, LogUtility(), self.MODEL)
        assert sol.achieved_risk == pytest.approx(-1.12, abs=1e-8)
        assert sol.achieved_budget == pytest.approx(1.0, rel=1e-9)
        assert sol.mu_star > 0.0
        assert sol.lambda_star > 0.0

    def test_matches_discretized_solver(self, space100k, entropic2):
        # Discretization error in the solver route falls like 1/n, so the
        # 1e-4 sup agreement needs the 1e5-state grid.
        gamma = -1.12
        sol = entropic_eu_closed_form(2.0, gamma, 1.0, LogUtility(), self.MODEL)
        report = solve_eu_max(entropic2, space100k, LogUtility(), 1.0, gamma)
        assert report.boundary == "interior"
        diff = np.abs(sol.on_space(space100k) - report.payoff).max()
        assert diff < 1e-4

    def test_slack_limit_approaches_budget_over_rho(self, space20k, entropic2):
        free = solve_unconstrained(LogUtility(), space20k, 1.0)
        gamma2 = weighted_entropic_risk(entropic2, space20k, free.payoff)
        sol = entropic_eu_closed_form(
            2.0, gamma2 - 5e-5, 1.0, LogUtility(), self.MODEL
        )
        assert sol.mu_star < 0.01
        rho = np.linspace(0.2, 5.0, 50)
        assert np.abs(np.asarray(sol.payoff(rho)) - 1.0 / rho).max() < 1e-3

    def test_validation(self):
        with pytest.raises(InputError):
            entropic_eu_closed_form(0.0, -1.1, 1.0, LogUtility(), self.MODEL)
        with pytest.raises(InputError):
            entropic_eu_closed_form(2.0, math.inf, 1.0, LogUtility(), self.MODEL)
        with pytest.raises(InputError):
            entropic_eu_closed_form(2.0, -1.1, -1.0, LogUtility(), self.MODEL)


class TestSingleCrossing:
    SPACE = ProbSpace([0.25, 0.25, 0.25, 0.25], [0.5, 1.0, 1.5, 2.0])

    def test_identical_payoffs(self):
        x = np.array([3.0, 2.0, 1.0, 0.5])
        assert single_crossing_count(self.SPACE, x, x) == 0

    def test_one_crossing(self):
        a = np.array([3.0, 2.0, 1.0, 0.5])
        b = np.array([2.5, 2.2, 1.5, 1.0])
        assert single_crossing_count(self.SPACE, a, b) == 1

    def test_two_crossings(self):
        a = np.array([3.0, 1.0, 1.0, 0.9])
        b = np.array([2.0, 2.0, 0.5, 0.2])
        assert single_crossing_count(self.SPACE, a, b) == 2

    def test_noise_sized_differences_do_not_count(self):
        a = np.array([3.0, 2.0, 2.0 - 1e-12, 0.5])
        b = np.array([2.0, 2.0, 2.0, 1.0])
        assert single_crossing_count(self.SPACE, a, b) == 1

    def test_rejects_nonmonotone_input(self):
        rising = np.array([0.5, 1.0, 2.0, 3.0])
        flat = np.array([1.0, 1.0, 1.0, 1.0])
        with pytest.raises(InputError):
            single_crossing_count(self.SPACE, rising, flat)

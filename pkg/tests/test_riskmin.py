"""Least-risk payoffs: monotone map, multiplier search, closed form."""

import math

import numpy as np
import pytest

from entrisk import (
    ConvergenceError,
    InputError,
    LogNormalSDF,
    ProbSpace,
    RiskDensityCurve,
    SolverConfig,
    WeightingMeasure,
    entropic_risk_min_closed_form,
    fixed_point_map,
    integral_system_residual,
    integral_system_residual_lognormal,
    lambda_search,
    price,
    random_instance,
    solve_fixed_point,
    solve_risk_min,
    weighted_entropic_risk,
)

TWO_STATE = ProbSpace([0.5, 0.5], [0.5, 1.5])
ATOM1 = WeightingMeasure.single(1.0)


class TestSolverConfig:
    def test_defaults(self):
        cfg = SolverConfig()
        assert cfg.tol_payoff == 1e-10
        assert cfg.max_iter == 10_000

    def test_validation(self):
        with pytest.raises(InputError):
            SolverConfig(tol_payoff=0.0)
        with pytest.raises(InputError):
            SolverConfig(max_iter=0)
        with pytest.raises(InputError):
            SolverConfig(budget_rtol=-1e-8)
        with pytest.raises(InputError):
            SolverConfig(divergence_floor=0.5)


class TestFixedPointMap:
    def test_first_step_single_atom(self):
        # from the zero payoff every moment is one, so the update is the
        # positive part of -log(lam * rho) / a
        sp = ProbSpace([0.25, 0.25, 0.25, 0.25], [0.4, 0.9, 1.3, 2.1])
        a, lam = 2.0, 1.1
        got = fixed_point_map(WeightingMeasure.single(a), sp, np.zeros(4), lam)
        want = np.maximum(0.0, -np.log(lam * sp.sdf) / a)
        assert np.allclose(got, want, atol=1e-12)

    def test_monotone_in_argument(self):
        rng = np.random.default_rng(14)
        for _ in range(20):
            inst = random_instance(rng)
            n = inst.space.n_states
            x2 = rng.uniform(0.0, 2.0, n)
            x1 = x2 + rng.uniform(0.0, 1.0, n)
            lam = (1.0 + rng.uniform(0.05, 1.0)) / inst.space.mean_sdf()
            t1 = fixed_point_map(inst.measure, inst.space, x1, lam)
            t2 = fixed_point_map(inst.measure, inst.space, x2, lam)
            assert np.all(t1 >= t2 - 1e-12)

    def test_rejects_nonpositive_multiplier(self):
        with pytest.raises(InputError):
            fixed_point_map(ATOM1, TWO_STATE, [0.0, 0.0], 0.0)
        with pytest.raises(InputError):
            fixed_point_map(ATOM1, TWO_STATE, [0.0, 0.0], -1.0)


class TestSolveFixedPoint:
    def test_iterates_climb_to_the_fixed_point(self):
        lam = 1.4
        res = solve_fixed_point(ATOM1, TWO_STATE, lam)
        assert res.converged
        assert res.reason == "converged"
        x = np.zeros(2)
        for _ in range(res.iterations):
            x_next = fixed_point_map(ATOM1, TWO_STATE, x, lam)
            assert np.all(x_next >= x - 1e-14)
            x = x_next
        assert np.allclose(x, res.payoff, atol=1e-9)

    def test_fixed_point_matches_curve_inversion(self):
        rng = np.random.default_rng(15)
        for _ in range(10):
            inst = random_instance(rng)
            lam = (1.0 + rng.uniform(0.1, 1.5)) / inst.space.mean_sdf()
            res = solve_fixed_point(inst.measure, inst.space, lam)
            assert res.converged
            curve = RiskDensityCurve.from_payoff(inst.measure, inst.space, res.payoff)
            implied = np.maximum(
                0.0, np.asarray(curve.inverse(lam * inst.space.sdf))
            )
            assert np.abs(implied - res.payoff).max() < 1e-9

    def test_divergence_below_unit_price_of_risklessness(self):
        lam_bad = 0.8 / TWO_STATE.mean_sdf()
        res = solve_fixed_point(ATOM1, TWO_STATE, lam_bad)
        assert res.diverged
        assert res.payoff is None
        assert not res.converged
        assert res.reason in ("exponential moment underflow", "price of iterate blew up")

    def test_exhausted_budget_raises(self):
        lam = (1.0 + 1e-6) / TWO_STATE.mean_sdf()  # barely supported: slow climb
        with pytest.raises(ConvergenceError):
            solve_fixed_point(ATOM1, TWO_STATE, lam, SolverConfig(max_iter=5))


class TestLambdaSearch:
    def test_corner_solution_two_states(self):
        # budget small enough that the cheap state alone carries it
        found = lambda_search(ATOM1, TWO_STATE, 0.2)
        assert np.allclose(found.payoff, [0.8, 0.0], atol=1e-7)
        assert found.lambda_star == pytest.approx(1.2401020754895502, rel=1e-6)

    def test_saturated_budget_two_states(self):
        # large budget on a bounded kernel: every state active, the
        # multiplier pinned at 1/E[rho], and the payoff a shifted log
        found = lambda_search(ATOM1, TWO_STATE, 1.0)
        log_phi = -(1.0 + 0.5 * (0.5 * math.log(0.5) + 1.5 * math.log(1.5)))
        want = np.array([-math.log(0.5) - log_phi, -math.log(1.5) - log_phi])
        assert np.allclose(found.payoff, want, atol=1e-7)
        assert found.lambda_star == pytest.approx(1.0, abs=1e-9)

    def test_price_decreasing_in_multiplier(self):
        rng = np.random.default_rng(16)
        inst = random_instance(rng)
        lams = (1.0 + np.array([0.05, 0.1, 0.2, 0.4, 0.8, 1.6])) / inst.space.mean_sdf()
        budgets = []
        for lam in lams:
            res = solve_fixed_point(inst.measure, inst.space, lam)
            assert res.converged
            budgets.append(price(inst.space, res.payoff))
        b = np.array(budgets)
        # nonincreasing throughout, strictly so until the payoff dies out
        assert np.all(np.diff(b) <= 0.0)
        pos = b > 0.0
        assert np.all(np.diff(b[pos]) < 0.0)

    def test_rejects_bad_budget(self):
        with pytest.raises(InputError):
            lambda_search(ATOM1, TWO_STATE, 0.0)
        with pytest.raises(InputError):
            lambda_search(ATOM1, TWO_STATE, math.nan)


class TestSolveRiskMin:
    def test_report_fields_on_random_instances(self):
        rng = np.random.default_rng(17)
        for _ in range(15):
            inst = random_instance(rng)
            report = solve_risk_min(inst.measure, inst.space, inst.budget)
            assert np.all(report.payoff >= 0.0)
            assert abs(report.budget_residual) <= 1e-8 * inst.budget
            assert report.kkt_residual <= 1e-8
            assert report.psi_residual <= 1e-6
            assert report.risk_value == pytest.approx(
                weighted_entropic_risk(inst.measure, inst.space, report.payoff),
                abs=1e-14,
            )
            assert report.lambda_star * inst.space.mean_sdf() >= 1.0 - 1e-12

    def test_risk_level_decreasing_convex_in_budget(self):
        rng = np.random.default_rng(18)
        inst = random_instance(rng)
        grid = np.linspace(0.4, 2.4, 6)
        vals = [
            solve_risk_min(inst.measure, inst.space, float(x)).risk_value for x in grid
        ]
        assert np.all(np.diff(vals) < 0.0)
        for i in range(1, len(grid) - 1):
            assert vals[i] <= 0.5 * (vals[i - 1] + vals[i + 1]) + 1e-9

    def test_restarts_land_on_the_same_fixed_point(self):
        # multiplier strictly above 1/E[rho]: at the boundary value the
        # fixed points form a ray and only the budget pins the optimizer
        rng = np.random.default_rng(19)
        inst = random_instance(rng)
        lam = (1.0 + float(rng.uniform(0.1, 0.8))) / inst.space.mean_sdf()
        res = solve_fixed_point(inst.measure, inst.space, lam)
        assert res.converged
        x_star = res.payoff
        for start in (
            x_star + rng.uniform(0.0, 0.5, x_star.size),
            np.full(x_star.size, float(x_star.max()) + 1.0),
        ):
            x = start
            for _ in range(5000):
                x_next = fixed_point_map(inst.measure, inst.space, x, lam)
                if np.abs(x_next - x).max() <= 1e-12:
                    x = x_next
                    break
                x = x_next
            assert np.abs(x - x_star).max() < 1e-8


class TestClosedForm:
    MODEL = LogNormalSDF(-0.5, 1.0)

    def test_reference_values(self):
        # frozen from a direct quadrature + root solve over the normal
        # density, run independently of this module
        sol = entropic_risk_min_closed_form(2.0, 1.0, self.MODEL)
        assert sol.c1 == pytest.approx(0.08280146391808141, abs=1e-8)
        assert sol.gamma1 == pytest.approx(-1.248889924711573, abs=5e-7)
        assert sol.lambda_star == pytest.approx(1.006491289533342, abs=5e-7)
        assert sol.moment == pytest.approx(math.exp(2.0 * sol.gamma1), rel=1e-12)

    def test_payoff_rule(self):
        sol = entropic_risk_min_closed_form(2.0, 1.0, self.MODEL)
        rho = np.array([0.05, 0.5, 1.0, 5.0, 1.0 / sol.c1])
        want = np.maximum(0.0, -(np.log(sol.c1) + np.log(rho)) / 2.0)
        assert np.allclose(sol.payoff(rho), want, atol=0)
        assert sol.payoff(1.0 / sol.c1) == 0.0
        assert float(sol.payoff(2.0 / sol.c1)) == 0.0

    def test_budget_recovered_on_discretization(self, space20k):
        sol = entropic_risk_min_closed_form(2.0, 1.0, self.MODEL)
        assert price(space20k, sol.on_space(space20k)) == pytest.approx(1.0, abs=2e-3)

    def test_matches_discretized_solver(self, space20k, entropic2):
        for budget in (0.5, 1.0, 2.0):
            sol = entropic_risk_min_closed_form(2.0, budget, self.MODEL)
            report = solve_risk_min(entropic2, space20k, budget)
            assert abs(sol.gamma1 - report.risk_value) < 1e-3

    def test_small_budget_limit(self):
        vals = [
            entropic_risk_min_closed_form(2.0, x, self.MODEL).gamma1
            for x in (1e-1, 1e-2, 1e-3, 1e-4)
        ]
        assert np.all(np.diff(vals) > 0.0)
        assert vals[-1] > -1e-2

    def test_validation(self):
        with pytest.raises(InputError):
            entropic_risk_min_closed_form(-1.0, 1.0, self.MODEL)
        with pytest.raises(InputError):
            entropic_risk_min_closed_form(2.0, 0.0, self.MODEL)


class TestIntegralSystem:
    def test_solver_solution_is_consistent(self):
        rng = np.random.default_rng(23)
        inst = random_instance(rng)
        report = solve_risk_min(inst.measure, inst.space, inst.budget)
        check = integral_system_residual(
            inst.measure, inst.space, report.payoff, report.lambda_star
        )
        assert check.max_residual <= 1e-6
        assert check.residuals.shape == (inst.measure.n_atoms,)

    def test_perturbation_breaks_consistency(self):
        rng = np.random.default_rng(24)
        inst = random_instance(rng)
        report = solve_risk_min(inst.measure, inst.space, inst.budget)
        bumped = report.payoff.copy()
        bumped[0] += 0.1
        check = integral_system_residual(
            inst.measure, inst.space, bumped, report.lambda_star
        )
        assert check.max_residual > 1e-3

    def test_zero_payoff_branch(self):
        # multiplier large enough that the curve never reaches lam * rho:
        # every moment stays at one and the system closes exactly
        lam = 1.1 / TWO_STATE.sdf[0]
        check = integral_system_residual(ATOM1, TWO_STATE, [0.0, 0.0], lam)
        assert check.max_residual <= 1e-14

    def test_closed_form_under_quadrature(self):
        model = LogNormalSDF(-0.5, 1.0)
        sol = entropic_risk_min_closed_form(2.0, 1.0, model)
        check = integral_system_residual_lognormal(
            WeightingMeasure.single(2.0),
            model,
            [math.log(sol.moment)],
            sol.lambda_star,
        )
        assert check.max_residual <= 1e-6

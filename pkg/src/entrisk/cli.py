"""Command-line front end over the payoff solvers.

Four subcommands share one YAML run-file format: risk-min and eu-max
solve a single problem and emit a JSON report plus a payoff CSV,
frontier sweeps the budget grid and emits the attainable-risk curves,
and validate cross-checks the solvers against the brute-force oracles
on seeded random instances.  Artifacts are deterministic: floats are
written with 12 significant digits, JSON keys are sorted, and CSV rows
ascend in their first column, so identical inputs give byte-identical
files.

Exit codes: 0 success, 1 bad configuration or failed validation, 2
infeasible risk budget (the attainable bounds are printed), 3 solver
non-convergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .config import RunConfig, load_config
from .errors import ConvergenceError, InfeasibleRiskError, InputError
from .eumax import LogUtility, PowerUtility, solve_eu_max, solve_unconstrained
from .measure import risk_gradient, weighted_entropic_risk
from .oracle import (
    brute_force_eu_max,
    brute_force_risk_min,
    kkt_check_eumax,
    kkt_check_riskmin,
    random_instance,
)
from .riskmin import SolverConfig, solve_risk_min


def _fmt(value: float) -> str:
    return f"{value:.12g}"


def _round12(value: Any) -> Any:
    if isinstance(value, float):
        return float(_fmt(value))
    if isinstance(value, dict):
        return {k: _round12(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round12(v) for v in value]
    return value


def _write_json(path: Path, payload: dict[str, Any]) -> None:
    path.write_text(json.dumps(_round12(payload), indent=2, sort_keys=True) + "\n")
    print(f"wrote {path}")


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[float]]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(_fmt(cell) for cell in row) for row in rows)
    path.write_text("\n".join(lines) + "\n")
    print(f"wrote {path}")


def _resolve_output(cfg: RunConfig, args: argparse.Namespace) -> tuple[Path, str]:
    """Flags win over the run file's output section, which wins over defaults."""
    out_dir = Path(args.out or cfg.out_dir or ".")
    out_format = args.format or cfg.out_format or "both"
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir, out_format


def _gamma2_of(measure, space, utility, budget: float, solver: SolverConfig) -> float:
    free = solve_unconstrained(utility, space, budget, config=solver)
    return float(weighted_entropic_risk(measure, space, free.payoff))


def _run_risk_min(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    space = cfg.build_space()
    measure = cfg.build_measure()
    budget = cfg.require_budget()
    rep = solve_risk_min(measure, space, budget, config=cfg.solver)
    report = {
        "budget": budget,
        "lambda_star": rep.lambda_star,
        "gamma1": rep.risk_value,
        "budget_residual": rep.budget_residual,
        "kkt_residual": rep.kkt_residual,
        "psi_residual": rep.psi_residual,
        "iterations": rep.iterations,
        "bisections": rep.bisections,
    }
    # A utility section turns the report into the full pair of risk
    # levels: the attainable minimum and the unconstrained optimum's.
    if cfg.utility is not None:
        report["gamma2"] = _gamma2_of(
            measure, space, cfg.build_utility(), budget, cfg.solver
        )
    out_dir, out_format = _resolve_output(cfg, args)
    print(f"gamma1 = {_fmt(rep.risk_value)}  lambda_star = {_fmt(rep.lambda_star)}")
    if out_format in ("json", "both"):
        _write_json(out_dir / "risk_min.json", report)
    if out_format in ("csv", "both"):
        _write_csv(
            out_dir / "risk_min.csv",
            ("rho", "x_star"),
            list(zip(space.sdf, rep.payoff)),
        )
    return 0


def _run_eu_max(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    space = cfg.build_space()
    measure = cfg.build_measure()
    utility = cfg.build_utility()
    budget = cfg.require_budget()
    gamma = cfg.require_gamma()
    rep = solve_eu_max(measure, space, utility, budget, gamma, config=cfg.solver)
    free = solve_unconstrained(utility, space, budget, config=cfg.solver)
    report = {
        "budget": budget,
        "gamma": gamma,
        "lambda_star": rep.lambda_star,
        "mu_star": rep.mu_star,
        "eu_value": rep.eu_value,
        "risk_value": rep.risk_value,
        "gamma1": rep.gamma1,
        "gamma2": rep.gamma2,
        "budget_residual": rep.budget_residual,
        "risk_residual": rep.risk_residual,
        "kkt_residual": rep.kkt_residual,
        "iterations": rep.iterations,
        "bisections": rep.bisections,
    }
    out_dir, out_format = _resolve_output(cfg, args)
    print(
        f"eu_value = {_fmt(rep.eu_value)}  mu_star = {_fmt(rep.mu_star)}"
        f"  lambda_star = {_fmt(rep.lambda_star)}"
    )
    if out_format in ("json", "both"):
        _write_json(out_dir / "eu_max.json", report)
    if out_format in ("csv", "both"):
        _write_csv(
            out_dir / "eu_max.csv",
            ("rho", "x_star", "x_star_unconstrained"),
            list(zip(space.sdf, rep.payoff, free.payoff)),
        )
    return 0


def _run_frontier(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    space = cfg.build_space()
    measure = cfg.build_measure()
    grid = cfg.require_frontier_grid()
    want_g1 = args.which in ("gamma1", "both")
    want_g2 = args.which in ("gamma2", "both")
    utility = cfg.build_utility() if want_g2 else None
    header = ["x"] + (["gamma1"] if want_g1 else []) + (["gamma2"] if want_g2 else [])
    rows = []
    for budget in grid:
        row = [budget]
        if want_g1:
            rep = solve_risk_min(measure, space, budget, config=cfg.solver)
            row.append(rep.risk_value)
        if want_g2:
            free = solve_unconstrained(utility, space, budget, config=cfg.solver)
            row.append(float(weighted_entropic_risk(measure, space, free.payoff)))
        rows.append(row)
    out_dir, out_format = _resolve_output(cfg, args)
    if out_format in ("json", "both"):
        _write_json(
            out_dir / "frontier.json",
            {"columns": header, "rows": [list(r) for r in rows]},
        )
    if out_format in ("csv", "both"):
        _write_csv(out_dir / "frontier.csv", header, rows)
    return 0


def _fit_multipliers(measure, space, utility, payoff) -> tuple[float, float]:
    """Least-squares (mu, lambda) from the stationarity of a candidate."""
    design = np.column_stack([risk_gradient(measure, space, payoff), space.sdf])
    target = np.asarray(utility.marginal(payoff), dtype=np.float64)
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    return float(coef[0]), float(coef[1])


def _run_validate(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    # Comparisons against the oracles need the risk equality pinned well
    # below the 1e-6 agreement line, hence the tightened pair here.
    cmp_cfg = SolverConfig(risk_atol=1e-9, budget_rtol=1e-10)
    worst: dict[str, float] = {
        "riskmin_solver_vs_oracle": 0.0,
        "eumax_solver_vs_oracle": 0.0,
        "riskmin_oracle_kkt": 0.0,
        "eumax_oracle_kkt": 0.0,
        "solver_kkt": 0.0,
        "marginal_density_mass": 0.0,
        "cash_additivity": 0.0,
    }
    for trial in range(20):
        inst = random_instance(rng)
        measure, space, budget = inst.measure, inst.space, inst.budget
        utility = LogUtility() if trial % 2 == 0 else PowerUtility(1.7)

        rep_min = solve_risk_min(measure, space, budget, config=cmp_cfg)
        x_oracle = brute_force_risk_min(measure, space, budget)
        worst["riskmin_solver_vs_oracle"] = max(
            worst["riskmin_solver_vs_oracle"],
            float(np.max(np.abs(rep_min.payoff - x_oracle))),
        )
        grad = risk_gradient(measure, space, x_oracle)
        active = x_oracle > 1e-9
        lam_fit = float(-0.5 * ((grad / space.sdf)[active].min() + (grad / space.sdf)[active].max()))
        worst["riskmin_oracle_kkt"] = max(
            worst["riskmin_oracle_kkt"],
            kkt_check_riskmin(measure, space, x_oracle, lam_fit),
        )
        worst["solver_kkt"] = max(worst["solver_kkt"], rep_min.kkt_residual)

        gamma2 = _gamma2_of(measure, space, utility, budget, cmp_cfg)
        gamma = 0.5 * (rep_min.risk_value + gamma2)
        rep_eu = solve_eu_max(measure, space, utility, budget, gamma, config=cmp_cfg)
        y_oracle = brute_force_eu_max(measure, space, utility, budget, gamma)
        worst["eumax_solver_vs_oracle"] = max(
            worst["eumax_solver_vs_oracle"],
            float(np.max(np.abs(rep_eu.payoff - y_oracle))),
        )
        mu_fit, lam_eu = _fit_multipliers(measure, space, utility, y_oracle)
        worst["eumax_oracle_kkt"] = max(
            worst["eumax_oracle_kkt"],
            kkt_check_eumax(measure, space, utility, y_oracle, mu_fit, lam_eu),
        )
        worst["solver_kkt"] = max(worst["solver_kkt"], rep_eu.kkt_residual)

        mass = float(space.probs @ (-risk_gradient(measure, space, rep_min.payoff)))
        worst["marginal_density_mass"] = max(
            worst["marginal_density_mass"], abs(mass - 1.0)
        )
        shift = 0.25 + 2.0 * rng.random()
        h0 = weighted_entropic_risk(measure, space, rep_eu.payoff)
        h1 = weighted_entropic_risk(measure, space, rep_eu.payoff + shift)
        worst["cash_additivity"] = max(
            worst["cash_additivity"], abs(h1 - (h0 - shift))
        )

    tols = {
        "riskmin_solver_vs_oracle": 1e-6,
        "eumax_solver_vs_oracle": 1e-6,
        "riskmin_oracle_kkt": 1e-6,
        "eumax_oracle_kkt": 1e-6,
        "solver_kkt": 1e-8,
        "marginal_density_mass": 1e-10,
        "cash_additivity": 1e-12,
    }
    checks = [
        {"name": name, "worst_residual": worst[name], "tol": tols[name],
         "pass": bool(worst[name] <= tols[name])}
        for name in sorted(worst)
    ]
    passed = all(c["pass"] for c in checks)
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    for c in checks:
        flag = "pass" if c["pass"] else "FAIL"
        print(f"{flag}  {c['name']}: {_fmt(c['worst_residual'])} (tol {_fmt(c['tol'])})")
    _write_json(
        out_dir / "validate.json",
        {"seed": args.seed, "instances": 20, "passed": passed, "checks": checks},
    )
    return 0 if passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entrisk",
        description="Optimal payoffs under weighted entropic risk budgets.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="path to a YAML run file")
        p.add_argument("--out", help="output directory (default: run file's, else .)")
        p.add_argument(
            "--format", choices=("csv", "json", "both"),
            help="artifact formats to write (default: run file's, else both)",
        )

    p = sub.add_parser("risk-min", help="least attainable risk at a price budget")
    common(p)
    p.set_defaults(func=_run_risk_min)

    p = sub.add_parser("eu-max", help="max expected utility under a risk cap")
    common(p)
    p.set_defaults(func=_run_eu_max)

    p = sub.add_parser("frontier", help="sweep budgets, emit attainable-risk curves")
    common(p)
    p.add_argument(
        "--which", choices=("gamma1", "gamma2", "both"), default="both",
        help="which curve(s) to compute",
    )
    p.set_defaults(func=_run_frontier)

    p = sub.add_parser("validate", help="cross-check solvers against the oracles")
    p.add_argument("--seed", type=int, default=0, help="instance generator seed")
    p.add_argument("--out", help="output directory (default .)")
    p.set_defaults(func=_run_validate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleRiskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

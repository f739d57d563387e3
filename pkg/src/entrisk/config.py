"""Run files: YAML descriptions of one solve, parsed strictly.

A run file carries up to seven top-level sections -- sdf, measure,
utility, problem, solver, frontier, output -- and a subcommand decides
which of them it needs.  Parsing is strict: an unknown key anywhere is
an error, so a typo fails loudly instead of silently leaving a default
in place.  Everything numeric is range-checked here, before any solver
starts, and the section builders hand back the same objects the library
API takes.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from .errors import InputError
from .eumax import LogUtility, PowerUtility, Utility
from .measure import WeightingMeasure
from .riskmin import SolverConfig
from .statespace import LogNormalSDF, ProbSpace

_TOP_KEYS = {"sdf", "measure", "utility", "problem", "solver", "frontier", "output"}
_FORMATS = ("csv", "json", "both")


def _require_mapping(value: Any, where: str) -> Mapping[str, Any]:
    if not isinstance(value, Mapping):
        raise InputError(f"{where} must be a mapping, got {type(value).__name__}")
    return value


def _check_keys(section: Mapping[str, Any], allowed: set[str], where: str) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise InputError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def _number(section: Mapping[str, Any], key: str, where: str) -> float:
    value = section.get(key)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InputError(f"{where}.{key} must be a number, got {value!r}")
    return float(value)


def _integer(section: Mapping[str, Any], key: str, where: str) -> int:
    value = section.get(key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise InputError(f"{where}.{key} must be an integer, got {value!r}")
    return value


def _pairs(value: Any, where: str) -> list[tuple[float, float]]:
    if not isinstance(value, list) or not value:
        raise InputError(f"{where} must be a non-empty list of [a, b] pairs")
    out = []
    for k, item in enumerate(value):
        if (
            not isinstance(item, list)
            or len(item) != 2
            or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in item)
        ):
            raise InputError(f"{where}[{k}] must be a pair of numbers, got {item!r}")
        out.append((float(item[0]), float(item[1])))
    return out


@dataclass(frozen=True)
class RunConfig:
    """One parsed run file; section builders construct the solver inputs."""

    source: str
    sdf: Mapping[str, Any] | None
    measure: Mapping[str, Any] | None
    utility: Mapping[str, Any] | None
    budget: float | None
    gamma: float | None
    solver: SolverConfig
    frontier_grid: tuple[float, ...] | None
    out_dir: str | None
    out_format: str | None

    def build_space(self) -> ProbSpace:
        if self.sdf is None:
            raise InputError(f"{self.source}: missing required section 'sdf'")
        section = self.sdf
        kind = section.get("kind")
        if kind == "lognormal":
            _check_keys(section, {"kind", "b", "sigma", "n_states"}, "sdf")
            n_states = _integer(section, "n_states", "sdf")
            model = LogNormalSDF(
                b=_number(section, "b", "sdf"), sigma=_number(section, "sigma", "sdf")
            )
            return model.discretize(n_states)
        if kind == "discrete":
            _check_keys(section, {"kind", "states"}, "sdf")
            states = _pairs(section.get("states"), "sdf.states")
            probs = np.array([p for p, _ in states])
            rho = np.array([r for _, r in states])
            return ProbSpace.from_unsorted(probs, rho)
        raise InputError(
            f"sdf.kind must be 'lognormal' or 'discrete', got {kind!r}"
        )

    def build_measure(self) -> WeightingMeasure:
        if self.measure is None:
            raise InputError(f"{self.source}: missing required section 'measure'")
        section = self.measure
        _check_keys(section, {"atoms", "uniform_grid"}, "measure")
        has_atoms = "atoms" in section
        has_grid = "uniform_grid" in section
        if has_atoms == has_grid:
            raise InputError("measure needs exactly one of 'atoms' or 'uniform_grid'")
        if has_atoms:
            pairs = _pairs(section["atoms"], "measure.atoms")
            return WeightingMeasure(
                np.array([a for a, _ in pairs]), np.array([w for _, w in pairs])
            )
        grid = _require_mapping(section["uniform_grid"], "measure.uniform_grid")
        _check_keys(grid, {"a0", "a1", "count"}, "measure.uniform_grid")
        return WeightingMeasure.uniform_grid(
            _number(grid, "a0", "measure.uniform_grid"),
            _number(grid, "a1", "measure.uniform_grid"),
            _integer(grid, "count", "measure.uniform_grid"),
        )

    def build_utility(self) -> Utility:
        if self.utility is None:
            raise InputError(f"{self.source}: missing required section 'utility'")
        section = self.utility
        kind = section.get("kind")
        if kind == "log":
            _check_keys(section, {"kind"}, "utility")
            return LogUtility()
        if kind == "power":
            _check_keys(section, {"kind", "r"}, "utility")
            return PowerUtility(_number(section, "r", "utility"))
        raise InputError(f"utility.kind must be 'log' or 'power', got {kind!r}")

    def require_budget(self) -> float:
        if self.budget is None:
            raise InputError(f"{self.source}: missing required key 'problem.budget'")
        return self.budget

    def require_gamma(self) -> float:
        if self.gamma is None:
            raise InputError(f"{self.source}: missing required key 'problem.gamma'")
        return self.gamma

    def require_frontier_grid(self) -> tuple[float, ...]:
        if self.frontier_grid is None:
            raise InputError(f"{self.source}: missing required section 'frontier'")
        return self.frontier_grid


def _parse_solver(section: Mapping[str, Any] | None) -> SolverConfig:
    if section is None:
        return SolverConfig()
    allowed = {"tol_payoff", "max_iter", "bisect_tol", "risk_atol", "divergence_floor"}
    _check_keys(section, allowed, "solver")
    kwargs: dict[str, Any] = {}
    if "tol_payoff" in section:
        kwargs["tol_payoff"] = _number(section, "tol_payoff", "solver")
    if "max_iter" in section:
        kwargs["max_iter"] = _integer(section, "max_iter", "solver")
    # The file key names what the knob does at the interface: it bounds
    # the relative width of the multiplier bracket.
    if "bisect_tol" in section:
        kwargs["budget_rtol"] = _number(section, "bisect_tol", "solver")
    if "risk_atol" in section:
        kwargs["risk_atol"] = _number(section, "risk_atol", "solver")
    if "divergence_floor" in section:
        kwargs["divergence_floor"] = _number(section, "divergence_floor", "solver")
    return SolverConfig(**kwargs)


def _parse_frontier(section: Mapping[str, Any] | None) -> tuple[float, ...] | None:
    if section is None:
        return None
    _check_keys(section, {"grid"}, "frontier")
    raw = section.get("grid")
    if not isinstance(raw, list) or not raw:
        raise InputError("frontier.grid must be a non-empty list of budgets")
    grid = []
    for k, value in enumerate(raw):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InputError(f"frontier.grid[{k}] must be a number, got {value!r}")
        if value <= 0.0:
            raise InputError(f"frontier.grid[{k}] must be positive, got {value}")
        grid.append(float(value))
    if len(set(grid)) != len(grid):
        raise InputError("frontier.grid contains duplicate budgets")
    return tuple(sorted(grid))


def load_config(path: str | Path) -> RunConfig:
    """Parse and validate one run file; raises InputError on any defect."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InputError(f"{path} is not valid YAML: {exc}") from exc
    if raw is None:
        raw = {}
    top = _require_mapping(raw, f"{path}")
    _check_keys(top, _TOP_KEYS, f"{path}")

    sdf = top.get("sdf")
    measure = top.get("measure")
    utility = top.get("utility")
    for name, section in (("sdf", sdf), ("measure", measure), ("utility", utility)):
        if section is not None:
            _require_mapping(section, name)

    budget = gamma = None
    problem = top.get("problem")
    if problem is not None:
        problem = _require_mapping(problem, "problem")
        _check_keys(problem, {"budget", "gamma"}, "problem")
        if "budget" in problem:
            budget = _number(problem, "budget", "problem")
            if budget <= 0.0:
                raise InputError(f"problem.budget must be positive, got {budget}")
        if "gamma" in problem:
            gamma = _number(problem, "gamma", "problem")

    out_dir = out_format = None
    output = top.get("output")
    if output is not None:
        output = _require_mapping(output, "output")
        _check_keys(output, {"dir", "format"}, "output")
        if "dir" in output:
            if not isinstance(output["dir"], str):
                raise InputError(f"output.dir must be a string, got {output['dir']!r}")
            out_dir = output["dir"]
        if "format" in output:
            if output["format"] not in _FORMATS:
                raise InputError(
                    f"output.format must be one of {', '.join(_FORMATS)}, "
                    f"got {output['format']!r}"
                )
            out_format = output["format"]

    solver_section = top.get("solver")
    if solver_section is not None:
        solver_section = _require_mapping(solver_section, "solver")
    try:
        solver = _parse_solver(solver_section)
    except TypeError as exc:  # pragma: no cover - guarded by key checks
        raise InputError(f"bad solver section: {exc}") from exc

    return RunConfig(
        source=str(path),
        sdf=sdf,
        measure=measure,
        utility=utility,
        budget=budget,
        gamma=gamma,
        solver=solver,
        frontier_grid=_parse_frontier(
            _require_mapping(top["frontier"], "frontier") if "frontier" in top else None
        ),
        out_dir=out_dir,
        out_format=out_format,
    )

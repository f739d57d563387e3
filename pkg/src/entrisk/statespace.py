"""Finite probability spaces carrying a state-price density.

A model is a finite list of states, each with a probability and a value of
the state-price density (SDF) rho.  States are kept sorted ascending by rho;
that ordering is the canonical one used everywhere else, so payoffs that are
optimal for a risk-averse agent come out nonincreasing along the state index.

Expectations are computed with exact compensated summation (``math.fsum``)
in the fixed ascending-state order, so results are reproducible to the last
bit across runs and platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import special

from .errors import InputError

__all__ = [
    "ProbSpace",
    "LogNormalSDF",
    "normal_cdf",
    "normal_quantile",
    "as_payoff",
    "expectation",
    "price",
]

# Probabilities may be entered by hand; accept this much slack, then renormalize.
_PROB_SUM_SLACK = 1e-9


def normal_cdf(x: ArrayLike) -> NDArray[np.float64] | float:
    """Standard normal CDF, accurate to ~1e-15 (Cephes ndtr)."""
    return special.ndtr(x)


def normal_quantile(p: ArrayLike) -> NDArray[np.float64] | float:
    """Standard normal quantile, accurate to ~1e-15 (Cephes ndtri)."""
    return special.ndtri(p)


def _as_vector(values: ArrayLike, name: str) -> NDArray[np.float64]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InputError(f"{name} must be a nonempty 1-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class ProbSpace:
    """Finite probability space with a positive state-price density.

    Parameters
    ----------
    probs : array_like
        Strictly positive state probabilities.  The sum may deviate from 1
        by at most 1e-9; it is renormalized exactly on construction.
    sdf : array_like
        Strictly positive SDF values, nondecreasing.  Use
        :meth:`from_unsorted` for data in arbitrary order.
    """

    probs: NDArray[np.float64]
    sdf: NDArray[np.float64]

    def __post_init__(self) -> None:
        p = _as_vector(self.probs, "probs")
        rho = _as_vector(self.sdf, "sdf")
        if p.shape != rho.shape:
            raise InputError(
                f"probs and sdf must have equal length, got {p.size} and {rho.size}"
            )
        if np.any(p <= 0.0):
            raise InputError("all probabilities must be strictly positive")
        if np.any(rho <= 0.0):
            raise InputError("all sdf values must be strictly positive")
        if np.any(np.diff(rho) < 0.0):
            raise InputError(
                "sdf values must be nondecreasing; use ProbSpace.from_unsorted"
            )
        total = math.fsum(p)
        if abs(total - 1.0) > _PROB_SUM_SLACK:
            raise InputError(f"probabilities sum to {total!r}, expected 1")
        p = p / total
        p.flags.writeable = False
        rho = rho.copy()
        rho.flags.writeable = False
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "sdf", rho)

    @classmethod
    def from_unsorted(cls, probs: ArrayLike, sdf: ArrayLike) -> "ProbSpace":
        """Build a space from states in arbitrary order."""
        p = _as_vector(probs, "probs")
        rho = _as_vector(sdf, "sdf")
        if p.shape != rho.shape:
            raise InputError(
                f"probs and sdf must have equal length, got {p.size} and {rho.size}"
            )
        order = np.argsort(rho, kind="stable")
        return cls(p[order], rho[order])

    @property
    def n_states(self) -> int:
        return self.probs.size

    def mean_sdf(self) -> float:
        """E[rho], exactly summed."""
        return math.fsum(self.probs * self.sdf)

    def sdf_cdf(self, z: ArrayLike) -> NDArray[np.float64] | float:
        """Step CDF of the SDF: P(rho <= z)."""
        z_arr = np.asarray(z, dtype=np.float64)
        cum = np.concatenate(([0.0], np.cumsum(self.probs)))
        idx = np.searchsorted(self.sdf, z_arr, side="right")
        out = cum[idx]
        if z_arr.ndim == 0:
            return float(out)
        return out


def as_payoff(space: ProbSpace, values: ArrayLike) -> NDArray[np.float64]:
    """Validate a payoff vector against a space: one entry per state, all >= 0."""
    arr = _as_vector(values, "payoff")
    if arr.size != space.n_states:
        raise InputError(
            f"payoff has {arr.size} entries for a space with {space.n_states} states"
        )
    if np.any(arr < 0.0):
        raise InputError("payoff entries must be nonnegative")
    return arr


def expectation(space: ProbSpace, values: ArrayLike) -> float:
    """E[values] under the state probabilities.

    Summation is exact (compensated) and runs in ascending state order, so
    the result is independent of BLAS threading and reproducible bit for bit.
    """
    arr = _as_vector(values, "values")
    if arr.size != space.n_states:
        raise InputError(
            f"values has {arr.size} entries for a space with {space.n_states} states"
        )
    return math.fsum(space.probs * arr)


def price(space: ProbSpace, payoff: ArrayLike) -> float:
    """Market price E[rho * payoff] of a nonnegative payoff."""
    arr = as_payoff(space, payoff)
    return math.fsum(space.probs * space.sdf * arr)


@dataclass(frozen=True)
class LogNormalSDF:
    """SDF model with log rho ~ Normal(b, sigma^2).

    The running single-period market: E[rho] = exp(b + sigma^2/2), so
    b = -sigma^2/2 prices the riskless unit at one.
    """

    b: float
    sigma: float

    def __post_init__(self) -> None:
        if not (np.isfinite(self.b) and np.isfinite(self.sigma)):
            raise InputError("b and sigma must be finite")
        if self.sigma <= 0.0:
            raise InputError(f"sigma must be positive, got {self.sigma}")

    def mean(self) -> float:
        return float(np.exp(self.b + 0.5 * self.sigma**2))

    def cdf(self, z: ArrayLike) -> NDArray[np.float64] | float:
        """P(rho <= z); zero on the nonpositive axis."""
        z_arr = np.asarray(z, dtype=np.float64)
        out = np.zeros_like(z_arr, dtype=np.float64)
        pos = z_arr > 0.0
        with np.errstate(divide="ignore"):
            out = np.where(
                pos,
                special.ndtr((np.log(np.where(pos, z_arr, 1.0)) - self.b) / self.sigma),
                0.0,
            )
        if z_arr.ndim == 0:
            return float(out)
        return out

    def discretize(self, n_states: int) -> ProbSpace:
        """Equal-probability quantile discretization with midpoint rule.

        State i of n carries probability 1/n and the SDF value at the
        quantile (i - 1/2)/n, which keeps states sorted ascending in rho
        and preserves the monotone structure the solvers rely on.
        """
        if not isinstance(n_states, (int, np.integer)) or n_states < 2:
            raise InputError(f"n_states must be an integer >= 2, got {n_states!r}")
        u = (np.arange(1, n_states + 1) - 0.5) / n_states
        rho = np.exp(self.b + self.sigma * special.ndtri(u))
        return ProbSpace(np.full(n_states, 1.0 / n_states), rho)

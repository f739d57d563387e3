"""Entropic and weighted entropic risk of nonnegative payoffs.

The atomic building block is the exponential moment E[exp(-a X)] at an
aversion level a > 0.  A weighting measure mixes finitely many levels; the
resulting risk is the weighted average of the per-level entropic risks.
All moment work happens in log space after factoring out exp(-a min X),
which keeps every quantity finite for payoffs of any magnitude.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import InputError
from .statespace import ProbSpace, as_payoff, expectation

__all__ = [
    "WeightingMeasure",
    "RiskProfile",
    "RiskDensityCurve",
    "GateauxReport",
    "entropic_risk",
    "weighted_entropic_risk",
    "certainty_equivalent",
    "risk_gradient",
    "risk_profile",
    "gateaux_check",
]

# Exponents are clipped here before exp(); e^500 is still comfortably finite.
_EXP_CLIP = 500.0


@dataclass(frozen=True)
class WeightingMeasure:
    """Finitely supported positive measure on aversion levels.

    Atoms are canonicalized on construction: sorted ascending, duplicates
    merged by adding weights.  Weights need not sum to one.
    """

    atoms: NDArray[np.float64]
    weights: NDArray[np.float64]

    def __post_init__(self) -> None:
        a = np.atleast_1d(np.asarray(self.atoms, dtype=np.float64))
        w = np.atleast_1d(np.asarray(self.weights, dtype=np.float64))
        if a.ndim != 1 or a.size == 0 or a.shape != w.shape:
            raise InputError("atoms and weights must be nonempty 1-D arrays of equal length")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(w))):
            raise InputError("atoms and weights must be finite")
        if np.any(a <= 0.0):
            raise InputError("aversion levels must be strictly positive")
        if np.any(w <= 0.0):
            raise InputError("weights must be strictly positive")
        order = np.argsort(a, kind="stable")
        a, w = a[order], w[order]
        uniq, inverse = np.unique(a, return_inverse=True)
        merged = np.zeros(uniq.size)
        np.add.at(merged, inverse, w)
        uniq.flags.writeable = False
        merged.flags.writeable = False
        object.__setattr__(self, "atoms", uniq)
        object.__setattr__(self, "weights", merged)

    @classmethod
    def single(cls, a: float, weight: float = 1.0) -> "WeightingMeasure":
        """Point mass: plain entropic risk at level a."""
        return cls(np.array([a]), np.array([weight]))

    @classmethod
    def uniform_grid(cls, a0: float, a1: float, count: int) -> "WeightingMeasure":
        """count equally spaced atoms on [a0, a1], each with weight 1/count."""
        if count < 1:
            raise InputError(f"count must be >= 1, got {count}")
        if not (0.0 < a0 <= a1):
            raise InputError(f"need 0 < a0 <= a1, got a0={a0}, a1={a1}")
        if count == 1 and a0 != a1:
            raise InputError("count=1 requires a0 == a1")
        atoms = np.linspace(a0, a1, count)
        return cls(atoms, np.full(count, 1.0 / count))

    @property
    def n_atoms(self) -> int:
        return self.atoms.size


def _log_moments(
    measure: WeightingMeasure, space: ProbSpace, payoff: NDArray[np.float64]
) -> NDArray[np.float64]:
    """log E[exp(-a_j X)] per atom, exactly summed after a stability shift."""
    shift = float(payoff.min())
    out = np.empty(measure.n_atoms)
    for j, a in enumerate(measure.atoms):
        terms = space.probs * np.exp(-a * (payoff - shift))
        out[j] = -a * shift + math.log(math.fsum(terms))
    return out


def entropic_risk(a: float, space: ProbSpace, payoff: ArrayLike) -> float:
    """(1/a) log E[exp(-a X)].  Nonpositive for nonnegative payoffs."""
    if not (np.isfinite(a) and a > 0.0):
        raise InputError(f"aversion level must be positive, got {a!r}")
    x = as_payoff(space, payoff)
    shift = float(x.min())
    mean = math.fsum(space.probs * np.exp(-a * (x - shift)))
    return -shift + math.log(mean) / a


def weighted_entropic_risk(
    measure: WeightingMeasure, space: ProbSpace, payoff: ArrayLike
) -> float:
    """Weighted mix of entropic risks over the measure's atoms."""
    x = as_payoff(space, payoff)
    lm = _log_moments(measure, space, x)
    return math.fsum(measure.weights / measure.atoms * lm)


def certainty_equivalent(
    measure: WeightingMeasure, space: ProbSpace, payoff: ArrayLike
) -> float:
    """Sign-flipped risk: the certain amount the payoff is worth."""
    return -weighted_entropic_risk(measure, space, payoff)


def risk_gradient(
    measure: WeightingMeasure, space: ProbSpace, payoff: ArrayLike
) -> NDArray[np.float64]:
    """Per-state derivative density of the risk functional.

    Entries are strictly negative; the negation is a probability density
    under P, so expectation(space, -gradient) equals one.
    """
    x = as_payoff(space, payoff)
    lm = _log_moments(measure, space, x)
    z = -np.outer(x, measure.atoms) - lm[None, :]
    return -(np.exp(np.minimum(z, _EXP_CLIP)) @ measure.weights)


@dataclass(frozen=True)
class RiskProfile:
    """Risk value, exponential moments, and gradient of one payoff."""

    measure: WeightingMeasure
    log_moments: NDArray[np.float64]
    value: float
    marginal: NDArray[np.float64]

    @property
    def moments(self) -> NDArray[np.float64]:
        """E[exp(-a_j X)] per atom, each in (0, 1] for nonnegative payoffs."""
        return np.exp(self.log_moments)


def risk_profile(
    measure: WeightingMeasure, space: ProbSpace, payoff: ArrayLike
) -> RiskProfile:
    x = as_payoff(space, payoff)
    lm = _log_moments(measure, space, x)
    value = math.fsum(measure.weights / measure.atoms * lm)
    z = -np.outer(x, measure.atoms) - lm[None, :]
    marginal = -(np.exp(np.minimum(z, _EXP_CLIP)) @ measure.weights)
    lm.flags.writeable = False
    marginal.flags.writeable = False
    return RiskProfile(measure=measure, log_moments=lm, value=value, marginal=marginal)


class RiskDensityCurve:
    """Marginal density as a function of the wealth level.

    For fixed exponential moments, y maps to sum_j w_j exp(-a_j y) / m_j,
    strictly decreasing from +inf to 0.  Its inverse is the heart of the
    optimal-payoff construction: the first-order conditions pin the payoff
    where this curve meets the priced constraint level.
    """

    def __init__(self, measure: WeightingMeasure, log_moments: ArrayLike):
        lm = np.atleast_1d(np.asarray(log_moments, dtype=np.float64))
        if lm.shape != measure.atoms.shape:
            raise InputError("log_moments must have one entry per atom")
        self.measure = measure
        self.log_moments = lm
        # constants of the log-space evaluation: log w_j - log m_j
        self._c = np.log(measure.weights) - lm

    @classmethod
    def from_payoff(
        cls, measure: WeightingMeasure, space: ProbSpace, payoff: ArrayLike
    ) -> "RiskDensityCurve":
        x = as_payoff(space, payoff)
        return cls(measure, _log_moments(measure, space, x))

    def log_value(self, y: ArrayLike) -> NDArray[np.float64]:
        y_arr = np.atleast_1d(np.asarray(y, dtype=np.float64))
        z = self._c[None, :] - np.outer(y_arr, self.measure.atoms)
        zmax = z.max(axis=1, keepdims=True)
        return (zmax[:, 0] + np.log(np.exp(z - zmax).sum(axis=1)))

    def value(self, y: ArrayLike) -> NDArray[np.float64] | float:
        out = np.exp(np.minimum(self.log_value(y), _EXP_CLIP * 1.4))
        if np.ndim(y) == 0:
            return float(out[0])
        return out

    __call__ = value

    def inverse(self, z: ArrayLike, ftol: float = 1e-12) -> NDArray[np.float64] | float:
        """Solve value(y) = z for each positive z.

        Bracket [-1, 1] doubled outward until it straddles the root, then
        bisection, then a Newton polish.  Work happens on log value versus
        log z, whose slope lies in [-a_max, -a_min], so the polish is
        stable for z anywhere from tiny to huge.
        """
        z_arr = np.atleast_1d(np.asarray(z, dtype=np.float64))
        if np.any(~np.isfinite(z_arr)) or np.any(z_arr <= 0.0):
            raise InputError("inverse requires strictly positive finite z")
        target = np.log(z_arr)
        lo = np.full(z_arr.shape, -1.0)
        hi = np.full(z_arr.shape, 1.0)
        # log value decreases in y: push lo left until above target, hi right until below
        for _ in range(80):
            need = self.log_value(lo) < target
            if not need.any():
                break
            lo[need] *= 2.0
        for _ in range(80):
            need = self.log_value(hi) > target
            if not need.any():
                break
            hi[need] *= 2.0
        for _ in range(55):
            mid = 0.5 * (lo + hi)
            high = self.log_value(mid) > target
            lo = np.where(high, mid, lo)
            hi = np.where(high, hi, mid)
        y = 0.5 * (lo + hi)
        y = self._newton_polish(y, target, ftol)
        if np.ndim(z) == 0:
            return float(y[0])
        return y

    def inverse_from_below(
        self, z: NDArray[np.float64], y_start: NDArray[np.float64], ftol: float = 1e-13
    ) -> NDArray[np.float64]:
        """Newton-only inverse for callers that can supply a left starting
        point (the log curve is convex, so Newton from the left cannot
        overshoot).  Used by the solvers on warm starts."""
        return self._newton_polish(y_start.copy(), np.log(z), ftol)

    def _newton_polish(
        self, y: NDArray[np.float64], target: NDArray[np.float64], ftol: float
    ) -> NDArray[np.float64]:
        a = self.measure.atoms
        live = np.arange(y.size)
        for _ in range(60):
            e = np.exp(np.minimum(self._c[None, :] - np.outer(y[live], a), _EXP_CLIP))
            total = e.sum(axis=1)
            g = np.log(total) - target[live]
            slope = -(e @ a) / total
            y[live] = y[live] - g / slope
            live = live[np.abs(g) > ftol]
            if live.size == 0:
                break
        return y


@dataclass(frozen=True)
class GateauxReport:
    """Finite-difference check of the directional derivative of the risk."""

    t_values: NDArray[np.float64]
    quotients: NDArray[np.float64]
    reference: float
    rel_errors: NDArray[np.float64]
    extrapolated: float
    extrapolated_rel_error: float

    @property
    def passed(self) -> bool:
        """Agreement at the smallest step within 1e-4 relative."""
        return bool(self.rel_errors[-1] <= 1e-4)


def gateaux_check(
    measure: WeightingMeasure,
    space: ProbSpace,
    payoff: ArrayLike,
    direction: ArrayLike,
    t_values: ArrayLike = (1e-3, 1e-4, 1e-5, 1e-6),
) -> GateauxReport:
    """Compare (h(X + tY) - h(X)) / t against the gradient pairing E[h'(X) Y].

    The step sequence must keep X + tY nonnegative; steps are taken largest
    first and the report also linearly extrapolates the last two quotients
    to t = 0.
    """
    x = as_payoff(space, payoff)
    y = np.asarray(direction, dtype=np.float64)
    if y.shape != x.shape or not np.all(np.isfinite(y)):
        raise InputError("direction must be a finite vector matching the payoff")
    ts = np.sort(np.atleast_1d(np.asarray(t_values, dtype=np.float64)))[::-1]
    if np.any(ts <= 0.0):
        raise InputError("t values must be positive")
    if np.any(x + ts.max() * y < 0.0):
        raise InputError("X + tY leaves the nonnegative orthant at the largest step")

    h0 = weighted_entropic_risk(measure, space, x)
    grad = risk_gradient(measure, space, x)
    reference = math.fsum(space.probs * grad * y)
    quotients = np.array(
        [(weighted_entropic_risk(measure, space, x + t * y) - h0) / t for t in ts]
    )
    scale = max(abs(reference), 1e-30)
    rel = np.abs(quotients - reference) / scale
    # quotient(t) = limit + c t + O(t^2): eliminate the linear term
    t1, t2 = ts[-2], ts[-1]
    q1, q2 = quotients[-2], quotients[-1]
    extrapolated = q2 + (q2 - q1) * t2 / (t1 - t2)
    return GateauxReport(
        t_values=ts,
        quotients=quotients,
        reference=reference,
        rel_errors=rel,
        extrapolated=extrapolated,
        extrapolated_rel_error=abs(extrapolated - reference) / scale,
    )

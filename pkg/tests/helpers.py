"""Seeded random builders shared by the test modules."""

import numpy as np

from entrisk import ProbSpace, WeightingMeasure


def random_space(rng, n_states=None):
    """Well-conditioned space: probabilities off the floor, SDF spread ~1 decade."""
    n = int(n_states if n_states is not None else rng.integers(2, 13))
    probs = rng.dirichlet(np.full(n, 3.0))
    probs = np.maximum(probs, 1e-3)
    probs = probs / probs.sum()
    sdf = np.sort(np.exp(rng.normal(-0.1, 0.6, size=n)))
    while np.diff(sdf).min(initial=np.inf) < 1e-6:
        sdf = np.sort(np.exp(rng.normal(-0.1, 0.6, size=n)))
    return ProbSpace(probs, sdf)


def random_measure(rng, n_atoms=None):
    k = int(n_atoms if n_atoms is not None else rng.integers(1, 6))
    atoms = np.sort(rng.uniform(0.3, 4.0, size=k))
    while k > 1 and np.diff(atoms).min() < 1e-2:
        atoms = np.sort(rng.uniform(0.3, 4.0, size=k))
    weights = rng.dirichlet(np.full(k, 2.0))
    weights = np.maximum(weights, 0.02)
    return WeightingMeasure(atoms, weights / weights.sum())


def random_payoff(rng, n_states, low=0.0, high=3.0):
    return rng.uniform(low, high, size=n_states)

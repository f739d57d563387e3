"""Session-wide fixtures for the running log-normal market example."""

import pytest

from entrisk import LogNormalSDF, WeightingMeasure


@pytest.fixture(scope="session")
def model():
    """log rho ~ N(-0.5, 1): prices the riskless unit at one."""
    return LogNormalSDF(-0.5, 1.0)


@pytest.fixture(scope="session")
def space100k(model):
    return model.discretize(100_000)


@pytest.fixture(scope="session")
def space20k(model):
    return model.discretize(20_000)


@pytest.fixture(scope="session")
def entropic2():
    return WeightingMeasure.single(2.0)


@pytest.fixture(scope="session")
def werm_grid():
    """Eleven equally weighted aversion levels on [2, 3]."""
    return WeightingMeasure.uniform_grid(2.0, 3.0, 11)

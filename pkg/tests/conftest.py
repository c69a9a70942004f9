"""Shared fixtures: solved gasket parameter sets and cached graphs.

Gasket construction and dense resistance solves dominate the suite's
runtime, so graphs and resistance matrices are built once per session and
shared read-only across test modules.
"""
import numpy as np
import pytest

from hklab import GasketParams, build_gasket, resistance_matrix


@pytest.fixture(scope="session")
def params06():
    return GasketParams.solve(0.6)


@pytest.fixture(scope="session")
def params08():
    return GasketParams.solve(0.8)


@pytest.fixture(scope="session")
def gasket_of():
    """Factory (tau, level) -> GasketGraph, cached for the session."""
    cache = {}

    def get(tau, level):
        key = (round(float(tau), 12), int(level))
        if key not in cache:
            cache[key] = build_gasket(GasketParams.solve(tau), int(level))
        return cache[key]

    return get


@pytest.fixture(scope="session")
def resistance_of(gasket_of):
    """Factory (tau, level) -> dense resistance matrix, cached."""
    cache = {}

    def get(tau, level):
        key = (round(float(tau), 12), int(level))
        if key not in cache:
            cache[key] = resistance_matrix(gasket_of(tau, level))
        return cache[key]

    return get


@pytest.fixture()
def rng():
    return np.random.default_rng(20260819)

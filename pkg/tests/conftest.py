"""Shared fixtures: catalog bundles and small simulation configs.

Session scope is used for the analytic engines because they memoize the
evolution measures; rebuilding them per test would repeat the same tail
quadratures dozens of times.
"""

import numpy as np
import pytest

from kolmolab import catalog, engines, sde

# verdict lines recorded by the acceptance tests; replayed after the test
# table so they are visible even under default output capture
ACCEPTANCE_VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_VERDICTS:
        terminalreporter.section("acceptance verdicts")
        for line in ACCEPTANCE_VERDICTS:
            terminalreporter.line(line)


@pytest.fixture(scope="session")
def ou_const_bundle():
    return catalog.get("ou_const")


@pytest.fixture(scope="session")
def ou_periodic_bundle():
    return catalog.get("ou_periodic")


@pytest.fixture(scope="session")
def ou_convergent_bundle():
    return catalog.get("ou_convergent")


@pytest.fixture(scope="session")
def cubic_bundle():
    return catalog.get("cubic_dissipative")


@pytest.fixture(scope="session")
def double_well_bundle():
    return catalog.get("double_well_shifted")


@pytest.fixture(scope="session")
def ou_const_engine(ou_const_bundle):
    return engines.engine_for(ou_const_bundle)


@pytest.fixture(scope="session")
def ou_periodic_engine(ou_periodic_bundle):
    return engines.engine_for(ou_periodic_bundle)


@pytest.fixture
def fast_cfg():
    """Small but honest Monte Carlo config for smoke-level checks."""
    return sde.SimConfig(dt=2e-3, n_paths=4000, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(20240816)

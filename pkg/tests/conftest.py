import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ivselect.data import Dataset

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def make_data(n=200, k_x=2, k_z=6, alpha=None, beta=None, noise=1.0, seed=0, pi_low=1.0, pi_high=2.0):
    """Small linear IV design; returns (Dataset, beta, alpha, Pi)."""
    rng = np.random.default_rng(seed)
    beta = np.linspace(0.5, 1.0, k_x) if beta is None else np.asarray(beta, float)
    alpha = np.zeros(k_z) if alpha is None else np.asarray(alpha, float)
    Pi = rng.uniform(pi_low, pi_high, size=(k_z, k_x))
    Z = rng.standard_normal((n, k_z))
    E = noise * rng.standard_normal((n, k_x))
    u = noise * (rng.standard_normal(n) + 0.5 * E.sum(axis=1))
    X = Z @ Pi + E
    y = X @ beta + Z @ alpha + u
    return Dataset(y, X, Z), beta, alpha, Pi


@pytest.fixture
def small_data():
    return make_data()


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from elfusion import InternalDataset
from elfusion.simulation import ScenarioConfig, generate_internal

settings.register_profile(
    "repo", derandomize=True, deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")

LINEAR_THETA = (0.1, 0.1, 0.2)
COX_THETA = (-0.5, 1.0, -0.5)

# filled by test_acceptance, printed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


def linear_data(n, seed, family="linear", theta=LINEAR_THETA):
    cfg = ScenarioConfig(family=family, n=max(n, 20), N=(n,), theta_true=theta)
    return generate_internal(cfg, np.random.default_rng(seed))


def cox_data(n, seed, theta=COX_THETA, censor_upper=2.52):
    cfg = ScenarioConfig(family="cox", n=n, N=(n,), theta_true=theta, censor_upper=censor_upper)
    return generate_internal(cfg, np.random.default_rng(seed))


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))


@pytest.fixture
def lin200():
    return linear_data(200, 3)


@pytest.fixture
def cox200():
    return cox_data(200, 5)


def toy_mean_constraints():
    """g = theta - beta for the normal-mean toy (p = q = r = 1, v = 0)."""
    from elfusion import FunctionConstraints

    return FunctionConstraints(
        lambda d, th, et, pi, b: np.full((d.n, 1), th[0] - b[0]), p=1, v=0, r=1, q=1,
        jac_theta=lambda d, th, et, pi, b: np.ones((d.n, 1, 1)),
        jac_pi=lambda d, th, et, pi, b: np.zeros((d.n, 1, 0)),
        jac_beta=lambda d, th, et, pi, b: -np.ones((d.n, 1, 1)),
    )


def toy_mean_data(n, seed, mean=0.3):
    """Sample with empirical mean ``mean`` and empirical variance 1 (divisor n)."""
    y = np.random.default_rng(seed).normal(size=n)
    return InternalDataset((y - y.mean()) / y.std() + mean, np.empty((n, 0)))

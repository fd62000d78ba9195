import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ieppa import Instance, cmot_marginal_blocks
from ieppa.tensor import outer

settings.register_profile("repo", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def random_marginal_instance(rng, dims, capacity=2.0, cost=None):
    """CMOT instance with uniform random marginals and U = capacity * product."""
    sizes = dims[:2] if dims[2] == 1 else dims
    margs = [rng.random(n) + 0.1 for n in sizes]
    margs = [m / m.sum() for m in margs]
    C = rng.random(dims) if cost is None else cost
    U = None if capacity is None else capacity * outer(*margs)
    return Instance(C, cmot_marginal_blocks(dims), margs, U)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}  # criterion number -> result line, filled by test_acceptance


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])

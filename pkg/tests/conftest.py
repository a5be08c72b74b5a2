import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bmctri import analyze, k1, k2, k3, random_kernel

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def named():
    return {name: (P, analyze(P)) for name, P in (("K1", k1()), ("K2", k2()), ("K3", k3()))}


@pytest.fixture(scope="session")
def rkernels():
    return [random_kernel(m, s) for m in (2, 3) for s in (1, 2, 3)]


def rand_triangle(rng, m):
    return rng.normal(size=(m, m, m))

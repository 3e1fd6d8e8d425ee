import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sparsefa.model import FactorSolution, SampleMoments

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_solution(rng, p, m, oblique=True):
    L = rng.normal(scale=0.6, size=(p, m))
    psi = rng.uniform(0.2, 1.0, size=p)
    if oblique and m > 1:
        W = rng.normal(size=(m, m + 2))
        C = W @ W.T
        d = np.sqrt(np.diag(C))
        Phi = C / np.outer(d, d)
    else:
        Phi = np.eye(m)
    return FactorSolution(L, psi, Phi)


def random_moments(rng, p, n_obs=None):
    n = n_obs or 3 * p + 5
    X = rng.normal(size=(n, p)) @ rng.normal(size=(p, p))
    return SampleMoments.from_data(X)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one verdict line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = {}


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        ACCEPTANCE_LINES[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict in sorted(ACCEPTANCE_LINES.items(), key=lambda kv: int(kv[0].split("_")[1])):
        terminalreporter.write_line(f"{verdict} {name}")

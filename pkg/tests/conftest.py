import pytest

from fieldroad import dispersion
from fieldroad.model import ModelParams


@pytest.fixture(scope="session")
def params4():
    """d = 1, D = 4, mu = nu = 1, logistic reaction, default delta."""
    return ModelParams(d=1.0, D=4.0, mu=1.0, nu=1.0)


@pytest.fixture(scope="session")
def params4_nodelta():
    return ModelParams(d=1.0, D=4.0, mu=1.0, nu=1.0, delta=0.0)


@pytest.fixture(scope="session")
def cbrr4(params4):
    return dispersion.c_brr(params4)


_LOG = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LOG] = []


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one pass/fail line per acceptance criterion for the terminal summary."""
    return request.config.stash[_LOG]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LOG, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)

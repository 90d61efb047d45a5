import pytest

from hybriddft.oracle import ground_truth
from hybriddft.toymodels import make_chain

ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def record(request):
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def add(line: str) -> None:
        print(line)
        request.config.stash[ACCEPTANCE].append(line)

    return add


@pytest.fixture(scope="session")
def small_chain():
    return make_chain(4, 16.0, 64, 8.0, charges=[2.0, 1.0], width=0.7, stride=2)


@pytest.fixture(scope="session")
def chain8():
    return make_chain(8, 32.0, 256, 10.0, stride=4)


@pytest.fixture(scope="session")
def chain8_truth(chain8):
    n_star, mu_star = ground_truth(chain8, constrained=True)
    return chain8, n_star, mu_star

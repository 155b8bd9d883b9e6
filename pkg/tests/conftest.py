import pytest

from driftband.freeboundary import solve
from driftband.hamiltonian import FiniteMenu
from driftband.ode import LinearHolding, ProblemSpec

CANONICAL_DRIFTS = (-1.0, -0.5, 0.0, 0.5, 1.0)


def canonical_spec() -> ProblemSpec:
    menu = FiniteMenu.from_function(CANONICAL_DRIFTS, lambda m: m * m)
    return ProblemSpec(sigma=1.0, K=1.0, k=0.5, L=1.0, ell=0.5, h=LinearHolding(1.0), menu=menu)


def two_mode_spec() -> ProblemSpec:
    menu = FiniteMenu.from_pairs([(-1.0, 0.3), (1.0, 0.3)])
    return ProblemSpec(sigma=1.0, K=1.0, k=0.5, L=1.0, ell=0.5, h=LinearHolding(1.0), menu=menu)


@pytest.fixture(scope="session")
def spec():
    return canonical_spec()


@pytest.fixture(scope="session")
def solution(spec):
    return solve(spec)


@pytest.fixture(scope="session")
def two_mode():
    return two_mode_spec()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

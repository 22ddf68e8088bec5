import pytest

from exprb.discretization import build_grid
from exprb.problem import manufactured_problem


@pytest.fixture(scope="session")
def problem():
    return manufactured_problem()


@pytest.fixture(scope="session")
def fine_grid():
    return build_grid(999)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

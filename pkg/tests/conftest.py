import pytest

from qmh.markov import build_double_well, build_ising

_ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    print(line)
    _ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def dw():
    return build_double_well(4, 1.0)


@pytest.fixture(scope="session")
def dw2():
    return build_double_well(2, 1.0)


@pytest.fixture(scope="session")
def ising4():
    return build_ising(4, 1.0, 0.0, 1.0)


@pytest.fixture(scope="session")
def ising2():
    return build_ising(2, 1.0, 0.0, 0.7)

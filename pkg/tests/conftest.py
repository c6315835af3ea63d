import pytest

from udcantor.necklace import build_chain
from udcantor.trap import TrapMap, backward_orbit, default_config


@pytest.fixture(scope="session")
def chain():
    return build_chain(20)


@pytest.fixture(scope="session")
def trap2():
    return TrapMap(default_config(2), validated=True)


@pytest.fixture(scope="session")
def trap3():
    return TrapMap(default_config(3), validated=True)


@pytest.fixture(scope="session")
def julia2(trap2):
    return backward_orbit(trap2, 12)


ACCEPTANCE_LINES: dict[int, str] = {}


def record(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])

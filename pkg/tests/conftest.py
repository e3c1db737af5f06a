import pytest

from barymorse import KFunction, build_surface, trig_preset


@pytest.fixture(scope="session")
def torus():
    return build_surface("torus", 256)


@pytest.fixture(scope="session")
def torus64():
    return build_surface("torus", 64)


@pytest.fixture(scope="session")
def sphere():
    return build_surface("sphere", 48)


@pytest.fixture(scope="session")
def K1(torus):
    return KFunction.from_config({"kind": "constant"}, torus)


@pytest.fixture(scope="session")
def Ktrig(torus):
    return KFunction.from_config(trig_preset(), torus)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)

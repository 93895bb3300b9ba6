import pytest
from hypothesis import HealthCheck, settings

from gwgenealogy.genfun import parse_spec

settings.register_profile(
    "numeric", deadline=None, max_examples=30, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("numeric")

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def yule():
    return parse_spec("bd:0,1")


@pytest.fixture(scope="session")
def critical():
    return parse_spec("pmf:0:0.5,2:0.5")


@pytest.fixture(scope="session")
def geometric():
    return parse_spec("geom:0.6")


@pytest.fixture(scope="session")
def bd_super():
    return parse_spec("bd:0.25,0.75")


@pytest.fixture(scope="session")
def bd_sub():
    return parse_spec("bd:0.75,0.25")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])

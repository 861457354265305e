import pytest

from equistop.equilibrium import make_grid
from equistop.examples import bessel_problem, bessel_threshold, build_counterexample, put_problem, put_threshold

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def a_star():
    return bessel_threshold(1.0)


@pytest.fixture(scope="session")
def bessel():
    return bessel_problem(1.0)


@pytest.fixture(scope="session")
def bessel_grid(bessel):
    return make_grid(bessel, 400)


@pytest.fixture(scope="session")
def put10():
    return put_problem(0.0, 1.0, 1.0, 10.0)


@pytest.fixture(scope="session")
def put_c():
    return put_threshold(0.0, 1.0, 1.0, 10.0)


@pytest.fixture(scope="session")
def put_grid(put10):
    return make_grid(put10, 400)


@pytest.fixture(scope="session")
def counter():
    return build_counterexample(1.0, 2.0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

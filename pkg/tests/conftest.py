import numpy as np
import pytest

from kvdot.fem import ProblemSpec
from kvdot.mesh import build_mesh

# filled by tests/test_acceptance.py, printed once at the end of the run
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def mesh4():
    return build_mesh(4)


@pytest.fixture(scope="session")
def mesh8():
    return build_mesh(8)


@pytest.fixture(scope="session")
def mesh16():
    return build_mesh(16)


@pytest.fixture(scope="session")
def spec():
    return ProblemSpec()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_pair(mesh, rng, lo=1.0, hi=5.0):
    from kvdot.objective import CoefficientPair

    return CoefficientPair(rng.uniform(lo, hi, mesh.n_nodes), rng.uniform(lo, hi, mesh.n_nodes))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(':'))):
            terminalreporter.write_line(line)

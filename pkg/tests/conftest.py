import numpy as np
import pytest

from driftspec.assembly import assemble, solve_eigen
from driftspec.fields import TensorFamily, induced_metric
from driftspec.mesh import disk_mesh, interval_mesh, rectangle_mesh


def solve(mesh, k, bc="dirichlet", family=None, eta=None):
    g = induced_metric(mesh)
    op = assemble(mesh, g, family or TensorFamily.metric(), eta, bc)
    return solve_eigen(op, k)


@pytest.fixture(scope="session")
def square32():
    return rectangle_mesh(nx=32)


@pytest.fixture(scope="session")
def square_dirichlet(square32):
    return solve(square32, 6)


@pytest.fixture(scope="session")
def square_neumann(square32):
    return solve(square32, 8, "t-neumann")


@pytest.fixture(scope="session")
def interval_dirichlet():
    return solve(interval_mesh(n=400), 7)


@pytest.fixture(scope="session")
def disk16():
    return solve(disk_mesh(n=16), 4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    # criterion verdicts collected by test_acceptance, shown even without -s
    import sys

    lines = getattr(sys.modules.get("test_acceptance"), "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

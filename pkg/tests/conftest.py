from pathlib import Path

import pytest

from stekloff.assembly import build_dof_map
from stekloff.mesh import generate_cube_mesh, generate_lshape_mesh
from stekloff.stekloff_ops import BoundaryOperators

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def cube1():
    return generate_cube_mesh(1)


@pytest.fixture(scope="session")
def cube2():
    return generate_cube_mesh(2)


@pytest.fixture(scope="session")
def lshape2():
    return generate_lshape_mesh(2)


@pytest.fixture(scope="session", params=["cube2", "lshape2"])
def small_mesh(request):
    return request.getfixturevalue(request.param)


@pytest.fixture(scope="session")
def small_ops(small_mesh):
    return BoundaryOperators(small_mesh, build_dof_map(small_mesh))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)

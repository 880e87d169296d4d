import numpy as np
import pytest

from cfsi.fespace import build_spaces
from cfsi.mesh import Boundary, Mesh, Region, generate_benchmark_mesh, rectangle_mesh


@pytest.fixture(scope="session")
def bench_mesh():
    return generate_benchmark_mesh(level=0)


@pytest.fixture(scope="session")
def bench_dofs(bench_mesh):
    return build_spaces(bench_mesh)


@pytest.fixture
def unit_square():
    return rectangle_mesh(1.0, 1.0, 4, 4)


@pytest.fixture
def fsi_box():
    """Small fluid box with a solid block inside, interface labelled."""
    return rectangle_mesh(1.0, 1.0, 6, 6, solid_box=(0.33, 0.67, 0.33, 0.67),
                          labels={s: Boundary.WALL for s in ("left", "right", "bottom", "top")})


def single_triangle(region=Region.FLUID):
    v = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    e = np.array([[0, 1], [1, 2], [2, 0]])
    return Mesh(v, np.array([[0, 1, 2]]), np.array([region]), e, np.full(3, Boundary.WALL))


def two_triangles(regions=(Region.FLUID, Region.SOLID)):
    v = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    t = np.array([[0, 1, 2], [0, 2, 3]])
    outer = np.array([[0, 1], [1, 2], [2, 3], [3, 0]])
    labels = np.full(4, Boundary.WALL)
    if regions[0] != regions[1]:
        outer = np.vstack([outer, [[0, 2]]])
        labels = np.append(labels, Boundary.INTERFACE)
    return Mesh(v, t, np.array(regions), outer, labels)


def pytest_terminal_summary(terminalreporter):
    import sys

    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, (ok, detail) in sorted(acceptance.RESULTS.items()):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")

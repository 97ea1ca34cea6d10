import numpy as np
import pytest

from sierl import shapes
from sierl.assembly import Material
from sierl.circuit import PortSpec, triangles_in_box
from sierl.mesh import build_edges

COPPER = Material(5.8e7)


@pytest.fixture
def copper():
    return COPPER


@pytest.fixture
def prism():
    return shapes.prism()


@pytest.fixture
def tetra():
    return shapes.tetrahedron()


def bar_ports(mesh, length, name="p1"):
    """End-face port of a bar lying along x from 0 to ``length``."""
    eps = 1e-9 * length
    src = triangles_in_box(mesh, (-1, -1, -1), (eps, 1, 1))
    snk = triangles_in_box(mesh, (length - eps, -1, -1), (1, 1, 1))
    return [PortSpec(name, src, snk)]


def two_port_bar(length=20e-6, width=4e-6, height=2e-6, cell=1e-6):
    """Bar with ports on its two halves' end faces, plus a middle contact:
    port A drives x=0 -> mid-band, port B drives mid-band -> x=length."""
    m = shapes.bar(length, width, height, cell)
    c = m.centroids()
    eps = 1e-9 * length
    tol = 0.51 * cell
    left = np.flatnonzero(c[:, 0] < eps)
    right = np.flatnonzero(c[:, 0] > length - eps)
    mid_top = np.flatnonzero((np.abs(c[:, 0] - length / 2) < tol) & (c[:, 2] > height - eps))
    mid_bot = np.flatnonzero((np.abs(c[:, 0] - length / 2) < tol) & (c[:, 2] < eps))
    ports = [PortSpec("A", left, mid_top), PortSpec("B", right, mid_bot)]
    return m, ports


@pytest.fixture
def small_bar():
    m = shapes.bar(20e-6, 4e-6, 2e-6, 1e-6)
    return m, build_edges(m), bar_ports(m, 20e-6)


# criterion number -> summary line, filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])

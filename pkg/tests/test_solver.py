import numpy as np
import pytest
import scipy.sparse as sp

from conftest import bar_ports
from sierl import shapes
from sierl.assembly import branch_operator
from sierl.circuit import build_graph, loop_basis, loop_voltage
from sierl.errors import DimensionMismatch, NoConvergence
from sierl.mesh import build_edges
from sierl.solver import LoopSystem, build_preconditioner, direct_solve, gmres, gmres_solve

OMEGA = 2 * np.pi * 10e9


@pytest.fixture(scope="module")
def bar_system():
    from conftest import COPPER

    m = shapes.bar(20e-6, 4e-6, 2e-6, 1e-6)
    e = build_edges(m)
    basis = loop_basis(build_graph(m, e, bar_ports(m, 20e-6)))
    op = branch_operator(m, e, COPPER)
    return basis, op, LoopSystem(basis, op, OMEGA)


def random_complex(n, seed, shift=0.0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)) + shift * np.eye(n)


def test_identity_converges_in_one_step():
    b = np.arange(1, 6) + 1j
    res = gmres(lambda v: v, b, tol=1e-12)
    assert res.iterations == 1
    assert np.allclose(res.x, b)


def test_gmres_matches_dense_solve():
    A = random_complex(40, 0, shift=12.0)
    b = np.random.default_rng(1).normal(size=40) + 0j
    for restart in (5, 100):
        res = gmres(lambda v: A @ v, b, tol=1e-10, restart=restart)
        assert np.linalg.norm(A @ res.x - b) <= 1e-9 * np.linalg.norm(b)


def test_left_preconditioning_with_exact_inverse():
    A = random_complex(30, 2, shift=3.0)
    Ainv = np.linalg.inv(A)
    b = np.ones(30, dtype=complex)
    res = gmres(lambda v: A @ v, b, psolve=lambda v: Ainv @ v, tol=1e-10)
    assert res.iterations == 1
    assert np.allclose(A @ res.x, b)


def test_zero_rhs():
    res = gmres(lambda v: 2 * v, np.zeros(7))
    assert res.iterations == 0
    assert np.all(res.x == 0)


def test_residuals_nonincreasing_within_cycle():
    A = random_complex(60, 3, shift=8.0)
    res = gmres(lambda v: A @ v, np.ones(60), tol=1e-10, restart=200)
    h = np.asarray(res.residuals)
    assert np.all(np.diff(h) <= 1e-12)
    assert h[0] == pytest.approx(1.0)


def test_no_convergence_carries_best_iterate():
    A = random_complex(50, 4)
    b = np.ones(50, dtype=complex)
    with pytest.raises(NoConvergence) as info:
        gmres(lambda v: A @ v, b, tol=1e-12, restart=3, maxiter=6)
    exc = info.value
    assert exc.iterations == 6
    assert exc.x is not None and exc.x.shape == (50,)
    assert np.linalg.norm(A @ exc.x - b) < np.linalg.norm(b)


def test_bad_tolerance():
    with pytest.raises(ValueError):
        gmres(lambda v: v, np.ones(3), tol=0.0)


def test_preconditioner_pattern_and_symmetry(bar_system):
    basis, op, _ = bar_system
    pre = build_preconditioner(basis, op, OMEGA)
    A = basis.A_mesh
    pattern = (abs(A) @ abs(A).T).toarray() != 0
    P = pre.P.tocsr()
    assert not np.any(P.toarray()[~pattern])
    assert abs(P - P.T).max() <= 1e-15 * abs(P).max()
    x = np.random.default_rng(5).normal(size=P.shape[0]) + 0j
    y = pre.solve(P @ x)
    assert np.linalg.norm(y - x) <= 1e-10 * np.linalg.norm(x)


def test_preconditioner_equals_diagonal_congruence(bar_system):
    basis, op, _ = bar_system
    pre = build_preconditioner(basis, op, OMEGA)
    A = basis.A_mesh.toarray()
    ref = A @ np.diag(op.diagonal(OMEGA)) @ A.T
    assert np.abs(pre.P.toarray() - ref).max() <= 1e-14 * np.abs(ref).max()


def test_loop_matrix_complex_symmetric(bar_system):
    basis, op, system = bar_system
    Z = system.matrix()
    assert np.abs(Z - Z.T).max() <= 1e-12 * np.abs(Z).max()
    x = np.random.default_rng(6).normal(size=system.n)
    assert np.allclose(system.apply(x), Z @ x, rtol=1e-12, atol=1e-12 * np.abs(Z @ x).max())


def test_gmres_agrees_with_direct(bar_system):
    basis, op, system = bar_system
    V = loop_voltage(basis, [1.0])
    ref = direct_solve(system, V)
    pre = build_preconditioner(basis, op, OMEGA)
    res = gmres_solve(system, pre, V, tol=1e-3)
    k = basis.source_loops[0]
    assert abs(res.x[k] - ref[k]) <= 1e-2 * abs(ref[k])
    assert np.linalg.norm(res.x - ref) <= 1e-2 * np.linalg.norm(ref)


def test_preconditioner_cuts_iterations(bar_system):
    basis, op, system = bar_system
    V = loop_voltage(basis, [1.0])
    plain = gmres_solve(system, None, V, tol=1e-6)
    pre = gmres_solve(system, build_preconditioner(basis, op, OMEGA), V, tol=1e-6)
    assert pre.iterations < plain.iterations


def test_zero_excitation(bar_system):
    basis, op, system = bar_system
    res = gmres_solve(system, None, loop_voltage(basis, [0.0]))
    assert res.iterations == 0 and not np.any(res.x)


def test_rhs_shape_checked(bar_system):
    basis, op, system = bar_system
    with pytest.raises(DimensionMismatch):
        gmres_solve(system, None, np.ones(system.n + 1))


@pytest.mark.slow
def test_iterations_grow_sublinearly(copper):
    counts, loops = [], []
    for cell in (2e-6, 1e-6, 0.5e-6):
        m = shapes.bar(20e-6, 4e-6, 2e-6, cell)
        e = build_edges(m)
        basis = loop_basis(build_graph(m, e, bar_ports(m, 20e-6)))
        op = branch_operator(m, e, copper)
        system = LoopSystem(basis, op, OMEGA)
        res = gmres_solve(system, build_preconditioner(basis, op, OMEGA), loop_voltage(basis, [1.0]), tol=1e-6)
        counts.append(res.iterations)
        loops.append(basis.loop_count)
    assert counts[-1] / counts[0] < (loops[-1] / loops[0]) ** 0.5

import numpy as np
import pytest

from oracles import dense_toeplitz_apply
from sierl import shapes
from sierl.assembly import assemble_Lb_dense, lb_entries, rwg_dipole_moments
from sierl.errors import GridTooLarge
from sierl.mesh import build_edges, merge
from sierl.pfft import (
    PfftGrid,
    _stencil_weights,
    _vandermonde,
    build_grid,
    build_operator,
    convolve,
    grid_entries,
    kernel_fft,
    near_pairs,
    project,
)


@pytest.fixture(scope="module")
def box428():
    m = shapes.box((1.4e-6, 1.0e-6, 1.2e-6), (7, 5, 6))
    assert m.n_triangles == 428
    e = build_edges(m)
    return m, e, build_operator(m, e), assemble_Lb_dense(m, e)


def test_stencil_has_27_nodes(box428):
    m, e, op, _ = box428
    g = op.grid
    assert g.stencil_size == 27
    nodes = g.stencil_nodes()
    assert nodes.shape == (e.count, 27)
    assert all(len(set(row)) == 27 for row in nodes)
    assert nodes.min() >= 0 and nodes.max() < g.n_nodes


def test_stencil_centred_on_support(box428):
    m, e, op, _ = box428
    g = op.grid
    c = 0.5 * (m.centroids()[e.tri_plus] + m.centroids()[e.tri_minus])
    mid = g.origin + g.h * (g.stencil_start + g.order / 2)
    # support centre is within a cell of the stencil centre
    assert np.abs(mid - c).max() <= 1.5 * g.h


def test_translation_by_whole_cells():
    m = shapes.box((1.0, 0.8, 0.6), (4, 3, 2))
    e = build_edges(m)
    h = 0.11
    x = np.random.default_rng(0).normal(size=e.count)
    a = build_operator(m, e, spacing=h)
    b = build_operator(shapes.translate(m, (3 * h, -5 * h, 7 * h)), e, spacing=h)
    assert a.grid.dims == b.grid.dims
    assert np.array_equal(a.grid.stencil_start, b.grid.stencil_start)
    ya, yb = a.apply(x), b.apply(x)
    # rounding can move a pair across a quadrature tier boundary
    assert np.abs(ya - yb).max() <= 1e-8 * np.abs(ya).max()


def test_doubling_spacing_halves_grid():
    m = shapes.box((2.0, 1.0, 1.0), (8, 4, 4))
    e = build_edges(m)
    g1 = build_grid(m, e, spacing=0.05)
    g2 = build_grid(m, e, spacing=0.1)
    for n1, n2 in zip(g1.dims, g2.dims):
        assert n2 <= n1 // 2 + g1.order + 3
        assert n2 >= (n1 - 2 * (g1.order + 3)) // 2


def test_weights_reproduce_dipole_moment(box428):
    m, e, op, _ = box428
    W = _stencil_weights(op.B, op.grid)
    mom = rwg_dipole_moments(m, e)
    assert np.abs(W.sum(axis=2) - mom).max() <= 1e-10 * np.abs(mom).max()


def test_point_on_node_gets_unit_weight():
    V = _vandermonde(2)
    Vinv = np.linalg.inv(V)
    r = np.arange(3)
    offsets = np.stack(np.meshgrid(r, r, r, indexing="ij"), -1).reshape(-1, 3)
    for k in (0, 13, 26):
        moments = np.prod(offsets[k][None, :].astype(float) ** offsets, axis=1)
        w = Vinv @ moments
        assert np.abs(w - np.eye(27)[k]).max() < 1e-10


def test_grid_coupling_accurate_at_distance():
    a = shapes.icosphere(1.0, 1)
    m = merge(a, shapes.translate(a, (6.0, 0.5, 0.0)))
    e = build_edges(m)
    op = build_operator(m, e, margin=0)
    h = op.grid.h
    W = _stencil_weights(op.B, op.grid)
    on_b = m.triangle_conductor[e.tri_plus] == 1
    ia, ib = np.flatnonzero(~on_b), np.flatnonzero(on_b)
    pairs = np.array([(i, j) for i in ia[::4] for j in ib[::4]])
    gap = np.abs(op.grid.stencil_start[pairs[:, 0]] - op.grid.stencil_start[pairs[:, 1]]).max(axis=1)
    pairs = pairs[gap >= 10]
    assert len(pairs) > 50 and h > 0
    exact = lb_entries(m, e, pairs[:, 0], pairs[:, 1])
    approx = grid_entries(op.grid, W, pairs)
    assert np.abs(approx - exact).max() <= 1e-3 * np.abs(exact).max()


def test_convolution_matches_direct_sum():
    dims = (8, 8, 8)
    g = PfftGrid(np.zeros(3), 0.5, dims, 2, np.zeros((0, 3), dtype=np.int64))
    q = np.random.default_rng(3).normal(size=dims)
    got = convolve(kernel_fft(g), q, dims)
    ref = dense_toeplitz_apply(q, 0.5)
    assert np.abs(got - ref).max() <= 1e-12 * np.abs(ref).max()


def test_convolution_is_shift_invariant():
    dims = (10, 9, 8)
    g = PfftGrid(np.zeros(3), 1.0, dims, 2, np.zeros((0, 3), dtype=np.int64))
    Khat = kernel_fft(g)
    q1 = np.zeros(dims)
    q1[2, 2, 2] = 1.0
    q2 = np.zeros(dims)
    q2[5, 4, 3] = 1.0
    p1 = convolve(Khat, q1, dims)
    p2 = convolve(Khat, q2, dims)
    assert np.allclose(p1[:5, :5, :5], p2[3:8, 2:7, 1:6], rtol=1e-12, atol=1e-15)


def test_near_entries_are_exact(box428):
    m, e, op, L = box428
    pairs = op.pairs
    rng = np.random.default_rng(4)
    cols = rng.choice(e.count, 10, replace=False)
    for j in cols:
        x = np.zeros(e.count)
        x[j] = 1.0
        y = op.apply(x)
        near = np.union1d(pairs[pairs[:, 1] == j, 0], pairs[pairs[:, 0] == j, 1])
        assert np.abs(y[near] - L[near, j]).max() <= 1e-12 * np.abs(L).max()


def test_near_pairs_sorted_with_self(box428):
    m, e, op, _ = box428
    p = op.pairs
    assert np.all(p[:, 0] <= p[:, 1])
    assert np.sum(p[:, 0] == p[:, 1]) == e.count
    assert np.array_equal(p, p[np.lexsort((p[:, 1], p[:, 0]))])
    assert len(near_pairs(op.grid, 0)) < len(p)


def test_matvec_against_dense(box428):
    m, e, op, L = box428
    rng = np.random.default_rng(5)
    for _ in range(3):
        x = rng.normal(size=e.count)
        err = np.linalg.norm(op.apply(x) - L @ x) / np.linalg.norm(L @ x)
        assert err <= 1e-3


def test_operator_linear_symmetric_and_zero(box428):
    m, e, op, _ = box428
    rng = np.random.default_rng(6)
    x, y = rng.normal(size=e.count), rng.normal(size=e.count)
    assert np.all(op.apply(np.zeros(e.count)) == 0)
    lhs = op.apply(2.0 * x - 3j * y)
    rhs = 2.0 * op.apply(x) - 3j * op.apply(y)
    assert np.abs(lhs - rhs).max() <= 1e-12 * np.abs(rhs).max()
    assert abs(y @ op.apply(x) - x @ op.apply(y)) <= 1e-12 * abs(x @ op.apply(x))
    X = np.column_stack([x, y])
    assert np.allclose(op @ X, np.column_stack([op.apply(x), op.apply(y)]))


def test_interpolation_is_projection_transpose(box428):
    op = box428[2]
    assert (op.I != op.B.T).nnz == 0


def test_grid_too_large():
    m = shapes.box((1.0, 1.0, 1.0), (3, 3, 3))
    e = build_edges(m)
    with pytest.raises(GridTooLarge):
        build_grid(m, e, spacing=1e-3)
    with pytest.raises(GridTooLarge):
        build_grid(m, e, max_nodes=100)


def test_bad_order():
    m = shapes.box()
    e = build_edges(m)
    with pytest.raises(ValueError):
        build_grid(m, e, order=4)


@pytest.mark.parametrize("order", [1, 3])
def test_other_orders_run(order):
    m = shapes.box((1.0, 1.0, 1.0), (3, 3, 3))
    e = build_edges(m)
    op = build_operator(m, e, order=order)
    assert op.grid.stencil_size == (order + 1) ** 3
    x = np.random.default_rng(7).normal(size=e.count)
    L = assemble_Lb_dense(m, e)
    assert np.linalg.norm(op.apply(x) - L @ x) <= 5e-2 * np.linalg.norm(L @ x)


def test_project_shape(box428):
    m, e, op, _ = box428
    B = project(op.grid, m, e)
    assert B.shape == (3 * op.grid.n_nodes, e.count)

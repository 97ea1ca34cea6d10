"""Precorrected-FFT approximation of the partial inductance matrix.

Each basis function is replaced by point currents on a small cube of
``(order + 1)**3`` grid nodes whose moments match the basis current. The
grid-to-grid 1/(4 pi r) interaction is a Toeplitz product done by FFT on a
zero-padded grid, and pairs whose stencils overlap are corrected with their
exact entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft
import scipy.sparse as sp
from scipy.spatial import cKDTree

from . import quadrature
from .assembly import MU0, DEFAULT_QUADRATURE, QuadratureOptions, lb_entries
from .errors import GridTooLarge, SingularFit
from .mesh import EdgeSet, SurfaceMesh

DEFAULT_MAX_NODES = 50_000_000
# default spacing as a fraction of the mean support diameter, and default
# growth of the stencil-overlap near set (in nodes); together they keep the
# matvec error near 3e-4 at order 2
SPACING_FRACTION = 1.0 / 3.0
DEFAULT_MARGIN = 2


@dataclass(frozen=True, eq=False)
class PfftGrid:
    """Uniform grid ``origin + h * (i, j, k)`` with ``dims`` nodes per axis.

    ``stencil_start[e]`` is the lowest-index corner of edge ``e``'s stencil;
    the stencil is the cube ``start + {0..order}**3``.
    """

    origin: np.ndarray
    h: float
    dims: tuple
    order: int
    stencil_start: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.dims))

    @property
    def stencil_size(self) -> int:
        return (self.order + 1) ** 3

    def offsets(self) -> np.ndarray:
        """(stencil_size, 3) local node offsets, x slowest."""
        r = np.arange(self.order + 1)
        return np.stack(np.meshgrid(r, r, r, indexing="ij"), -1).reshape(-1, 3)

    def stencil_nodes(self, e=None) -> np.ndarray:
        """Flat node indices of the stencils, shape (n_edges, stencil_size)."""
        start = self.stencil_start if e is None else self.stencil_start[np.atleast_1d(e)]
        idx = start[:, None, :] + self.offsets()[None]
        return np.ravel_multi_index((idx[..., 0], idx[..., 1], idx[..., 2]), self.dims)

    def node_positions(self, flat) -> np.ndarray:
        return self.origin + self.h * np.stack(np.unravel_index(flat, self.dims), -1)


def edge_support_points(mesh: SurfaceMesh, edges: EdgeSet) -> np.ndarray:
    """(n_edges, 4, 3): shared-edge endpoints and the two free vertices."""
    v = mesh.vertices
    return np.stack([v[edges.vertex_a], v[edges.vertex_b], v[edges.opposite_plus], v[edges.opposite_minus]], 1)


def mean_support_diameter(mesh: SurfaceMesh, edges: EdgeSet) -> float:
    pts = edge_support_points(mesh, edges)
    d = np.linalg.norm(pts[:, :, None] - pts[:, None, :], axis=-1)
    return float(d.max(axis=(1, 2)).mean())


def build_grid(mesh: SurfaceMesh, edges: EdgeSet, spacing=None, order=2, max_nodes=DEFAULT_MAX_NODES) -> PfftGrid:
    """Grid covering the mesh with each edge's stencil centred on its support.

    The default spacing is ``SPACING_FRACTION`` times the mean over edges of
    the support diameter (the largest distance among the four vertices of
    the two triangles).

    Raises
    ------
    GridTooLarge
        The padded grid would have more than ``max_nodes`` nodes.
    """
    if not 1 <= order <= 3:
        raise ValueError(f"stencil order must be 1, 2 or 3, got {order}")
    h = float(spacing) if spacing is not None else SPACING_FRACTION * mean_support_diameter(mesh, edges)
    if not h > 0:
        raise ValueError("grid spacing must be positive")
    pts = edge_support_points(mesh, edges)
    centre = 0.5 * (pts.min(axis=1) + pts.max(axis=1))
    origin = mesh.vertices.min(axis=0) - order * h
    start = np.rint((centre - origin) / h - order / 2).astype(np.int64)
    span = np.ceil((mesh.vertices.max(axis=0) - origin) / h).astype(np.int64) + order + 1
    need = np.maximum(start.max(axis=0) + order + 1, span)
    dims = tuple(int(scipy.fft.next_fast_len(int(n), real=True)) for n in need)
    total = int(np.prod(dims, dtype=np.int64))
    if total > max_nodes:
        raise GridTooLarge(f"grid {dims} has {total} nodes, cap is {max_nodes}; increase spacing")
    return PfftGrid(origin, h, dims, order, start)


def _vandermonde(order):
    """Tensor Vandermonde of the local stencil: rows = monomial exponents,
    columns = stencil nodes (same ordering as PfftGrid.offsets)."""
    r = np.arange(order + 1, dtype=float)
    v1 = r[None, :] ** r[:, None]
    return np.kron(np.kron(v1, v1), v1)


def project(grid: PfftGrid, mesh: SurfaceMesh, edges: EdgeSet) -> sp.csr_matrix:
    """Projection ``B`` of shape (3 * n_nodes, n_edges), one block per
    Cartesian current component.

    The stencil weights of edge ``e`` and component ``c`` reproduce every
    tensor moment ``int f_c x^a y^b z^g`` with ``a, b, g <= order`` about the
    stencil, which includes all moments of total degree ``<= order``.

    Raises
    ------
    SingularFit
        The moment system cannot be solved reliably.
    """
    o = grid.order
    V = _vandermonde(o)
    if np.linalg.cond(V) > 1e12:
        raise SingularFit(f"stencil moment system of order {o} is ill-conditioned")
    Vinv = np.linalg.inv(V)
    ne = edges.count
    ns = grid.stencil_size
    expo = grid.offsets()  # exponent triples in the same ordering as the rows of V
    uv, w = quadrature.stroud(max(4, o + 2))
    corners = mesh.corners()
    mom = np.zeros((ne, 3, ns))
    for side, tri, opp in ((0, edges.tri_plus, edges.opposite_plus), (1, edges.tri_minus, edges.opposite_minus)):
        c = corners[tri]
        p = c[:, None, 0] + uv[None, :, :1] * (c[:, None, 1] - c[:, None, 0]) + uv[None, :, 1:] * (c[:, None, 2] - c[:, None, 0])
        sgn = 1.0 if side == 0 else -1.0
        scale = sgn / (2 * mesh.triangle_area[tri])
        f = scale[:, None, None] * (p - mesh.vertices[opp][:, None, :])  # (ne, nq, 3)
        loc = (p - (grid.origin + grid.h * grid.stencil_start)[:, None, :]) / grid.h
        powers = loc[:, :, None, :] ** expo[None, None, :, :]  # (ne, nq, ns, 3)
        mono = powers.prod(axis=-1)
        wt = w[None, :] * mesh.triangle_area[tri][:, None]
        mom += np.einsum("eq,eqc,eqs->ecs", wt, f, mono)
    weights = mom @ Vinv.T  # (ne, 3, ns)
    if not np.all(np.isfinite(weights)):
        raise SingularFit("non-finite projection weights")
    nodes = grid.stencil_nodes()  # (ne, ns)
    rows = (np.arange(3)[None, :, None] * grid.n_nodes + nodes[:, None, :]).ravel()
    cols = np.repeat(np.arange(ne), 3 * ns)
    B = sp.csr_matrix((weights.ravel(), (rows, cols)), shape=(3 * grid.n_nodes, ne))
    B.sum_duplicates()
    return B


def kernel_fft(grid: PfftGrid) -> np.ndarray:
    """Real FFT of the circulant embedding of ``1/(4 pi h |d|)``, ``d`` in
    node units, on a grid doubled along every axis. ``d = 0`` maps to 0."""
    shape = tuple(2 * n for n in grid.dims)
    axes = [np.fft.ifftshift(np.arange(-n, n)) for n in grid.dims]
    # circular offsets: index k < n means +k, k >= n means k - 2n; the
    # index n itself (offset -n) is never reached by a real pair
    dx, dy, dz = np.meshgrid(*axes, indexing="ij", sparse=True)
    r = np.sqrt(dx * dx + dy * dy + dz * dz)
    with np.errstate(divide="ignore"):
        K = 1.0 / (4 * np.pi * grid.h * r)
    K[0, 0, 0] = 0.0
    return scipy.fft.rfftn(K, s=shape)


def convolve(Khat: np.ndarray, Q: np.ndarray, dims, workers=None) -> np.ndarray:
    """Aperiodic grid convolution of node values ``Q`` (shape ``(..., *dims)``)
    with the kernel whose padded FFT is ``Khat``."""
    shape = tuple(2 * n for n in dims)
    axes = (-3, -2, -1)
    F = scipy.fft.rfftn(Q, s=shape, axes=axes, workers=workers)
    F *= Khat
    out = scipy.fft.irfftn(F, s=shape, axes=axes, workers=workers)
    return out[..., : dims[0], : dims[1], : dims[2]]


def near_pairs(grid: PfftGrid, margin: int = DEFAULT_MARGIN) -> np.ndarray:
    """Edge pairs ``(i, j)``, ``i <= j``, whose stencils overlap once each is
    grown by ``margin`` nodes. Self pairs included."""
    reach = grid.order + margin
    tree = cKDTree(grid.stencil_start.astype(float))
    pairs = tree.query_pairs(reach + 0.5, p=np.inf, output_type="ndarray")
    n = len(grid.stencil_start)
    pairs = np.vstack([np.column_stack([np.arange(n), np.arange(n)]), np.sort(pairs, axis=1)])
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return pairs[order]


def _stencil_weights(B: sp.csr_matrix, grid: PfftGrid) -> np.ndarray:
    """Dense (n_edges, 3, stencil_size) weights pulled back out of ``B``."""
    nodes = grid.stencil_nodes()
    ne = nodes.shape[0]
    Bc = B.tocsc()
    W = np.empty((ne, 3, grid.stencil_size))
    for c in range(3):
        sub = Bc[c * grid.n_nodes : (c + 1) * grid.n_nodes]
        rows = nodes.ravel()
        cols = np.repeat(np.arange(ne), grid.stencil_size)
        W[:, c, :] = np.asarray(sub[rows, cols]).reshape(ne, -1)
    return W


def grid_entries(grid: PfftGrid, W: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    """Grid-mediated ``(mu0 B^T H B)[i, j]`` for each pair, evaluated directly
    on the two stencils."""
    off = grid.offsets()
    delta = grid.stencil_start[pairs[:, 1]] - grid.stencil_start[pairs[:, 0]]
    keys, inv = np.unique(delta, axis=0, return_inverse=True)
    inv = inv.ravel()
    out = np.empty(len(pairs))
    for k, d in enumerate(keys):
        sel = np.flatnonzero(inv == k)
        # node distance between stencil node a of i and node b of j
        diff = (d[None, None, :] + off[None, :, :] - off[:, None, :]).astype(float)
        r = np.sqrt((diff * diff).sum(-1))
        with np.errstate(divide="ignore"):
            K = 1.0 / (4 * np.pi * grid.h * r)
        K[r == 0] = 0.0
        wi = W[pairs[sel, 0]]
        wj = W[pairs[sel, 1]]
        out[sel] = np.einsum("pca,ab,pcb->p", wi, K, wj)
    return MU0 * out


def precorrect(grid: PfftGrid, W: np.ndarray, mesh: SurfaceMesh, edges: EdgeSet, pairs: np.ndarray,
               quad: QuadratureOptions = DEFAULT_QUADRATURE):
    """Symmetric sparse ``L_d`` and the exact near entries (same order as ``pairs``)."""
    exact = lb_entries(mesh, edges, pairs[:, 0], pairs[:, 1], quad=quad)
    corr = exact - grid_entries(grid, W, pairs)
    off = pairs[:, 0] != pairs[:, 1]
    rows = np.concatenate([pairs[:, 0], pairs[off, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[off, 0]])
    Ld = sp.csr_matrix((np.concatenate([corr, corr[off]]), (rows, cols)), shape=(edges.count, edges.count))
    return Ld, exact


@dataclass(eq=False)
class PrecorrectedOperator:
    """``y = L_d x + mu0 * B^T (H * (B x))`` approximating ``Lb x``."""

    grid: PfftGrid
    B: sp.csr_matrix
    Khat: np.ndarray
    Ld: sp.csr_matrix
    pairs: np.ndarray
    diag: np.ndarray
    workers: int | None = None

    @property
    def shape(self):
        return (self.B.shape[1], self.B.shape[1])

    @property
    def I(self) -> sp.csr_matrix:
        """Interpolation, the exact transpose of the projection."""
        return self.B.T.tocsr()

    def grid_apply(self, x) -> np.ndarray:
        x = np.asarray(x)
        dims = self.grid.dims
        q = self.B @ x
        if np.iscomplexobj(q):
            Q = np.stack([q.real, q.imag]).reshape(2, 3, *dims)
            phi = convolve(self.Khat, Q, dims, self.workers).reshape(2, -1)
            return MU0 * (self.B.T @ (phi[0] + 1j * phi[1]))
        Q = q.reshape(3, *dims)
        return MU0 * (self.B.T @ convolve(self.Khat, Q, dims, self.workers).reshape(-1))

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x)
        if x.ndim == 2:
            return np.column_stack([self.apply(x[:, k]) for k in range(x.shape[1])])
        return self.Ld @ x + self.grid_apply(x)

    __matmul__ = apply

    def nbytes(self) -> int:
        """Bytes held by the operator's arrays."""
        mats = (self.B, self.Ld)
        n = sum(m.data.nbytes + m.indices.nbytes + m.indptr.nbytes for m in mats)
        return int(n + self.Khat.nbytes + self.pairs.nbytes + self.diag.nbytes + self.grid.stencil_start.nbytes)


def build_operator(mesh: SurfaceMesh, edges: EdgeSet, spacing=None, order=2, *, margin=DEFAULT_MARGIN,
                   max_nodes=DEFAULT_MAX_NODES, quad: QuadratureOptions = DEFAULT_QUADRATURE,
                   workers=None) -> PrecorrectedOperator:
    grid = build_grid(mesh, edges, spacing, order, max_nodes)
    B = project(grid, mesh, edges)
    W = _stencil_weights(B, grid)
    pairs = near_pairs(grid, margin)
    Ld, exact = precorrect(grid, W, mesh, edges, pairs, quad)
    diag = exact[pairs[:, 0] == pairs[:, 1]]
    return PrecorrectedOperator(grid, B, kernel_fft(grid), Ld, pairs, diag, workers)

"""Galerkin branch impedance with modified (edge-length free) RWG bases.

The branch impedance splits into a sparse surface-impedance part,
``Rb = Zs * G`` with ``G[i, j] = int f_i . f_j``, and a dense partial
inductance part ``Lb[i, j] = mu0/(4 pi) int int f_i(r) . f_j(r') / |r - r'|``.
``Lb`` does not depend on frequency, so a sweep assembles it once and only
rescales ``Rb`` through the scalar ``Zs``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _kernels, quadrature
from .errors import CoincidentPoints, NonPositiveFrequency, OutOfMemory, PointOutsideSupport
from .mesh import EdgeSet, SurfaceMesh

MU0 = 4e-7 * np.pi
COPPER_SIGMA = 5.8e7


@dataclass(frozen=True)
class Material:
    sigma: float
    mu: float = MU0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"conductivity must be positive, got {self.sigma}")
        if not self.mu > 0:
            raise ValueError(f"permeability must be positive, got {self.mu}")


def _check_omega(omega):
    if not omega > 0:
        raise NonPositiveFrequency(f"angular frequency must be positive, got {omega}")


def surface_impedance(mat: Material, omega: float) -> complex:
    """Surface impedance sqrt(j w mu / sigma), principal root (phase +45 deg)."""
    _check_omega(omega)
    return complex(np.sqrt(1j * omega * mat.mu / mat.sigma))


def skin_depth(mat: Material, omega: float) -> float:
    _check_omega(omega)
    return float(np.sqrt(2.0 / (omega * mat.mu * mat.sigma)))


def greens_static(r, r_prime) -> float:
    dist = float(np.linalg.norm(np.asarray(r, dtype=float) - np.asarray(r_prime, dtype=float)))
    if dist == 0.0:
        raise CoincidentPoints("static Green's function is singular at r == r'")
    return 1.0 / (4 * np.pi * dist)


# ---------------------------------------------------------------------------
# basis functions


def triangle_coefficients(mesh: SurfaceMesh, edges: EdgeSet) -> np.ndarray:
    """``sign / (2 A)`` for each (triangle, local edge) slot, so that the basis
    restricted to triangle ``t`` is ``coef[t, k] * (r - corner_k)``."""
    return edges.tri_signs / (2.0 * mesh.triangle_area[:, None])


def rwg_evaluate(mesh: SurfaceMesh, edges: EdgeSet, index: int, r, tol=1e-9) -> np.ndarray:
    """Value of basis ``index`` at point ``r`` (1/m).

    ``r`` must lie on one of the two support triangles (relative tolerance
    ``tol`` on barycentric coordinates and plane distance).
    """
    r = np.asarray(r, dtype=float)
    v = mesh.vertices
    for t, free, sign in (
        (edges.tri_plus[index], edges.opposite_plus[index], 1.0),
        (edges.tri_minus[index], edges.opposite_minus[index], -1.0),
    ):
        c = v[mesh.triangles[t]]
        e1, e2 = c[1] - c[0], c[2] - c[0]
        n = np.cross(e1, e2)
        scale = np.sqrt(np.linalg.norm(n))
        rel = r - c[0]
        if abs(rel @ n) / np.linalg.norm(n) > tol * scale:
            continue
        uv = np.linalg.lstsq(np.column_stack([e1, e2]), rel, rcond=None)[0]
        if uv.min() >= -tol and uv.sum() <= 1 + tol:
            return sign * (r - v[free]) / (2 * mesh.triangle_area[t])
    raise PointOutsideSupport(f"point {r} is not on either triangle of edge {index}")


def rwg_dipole_moments(mesh: SurfaceMesh, edges: EdgeSet) -> np.ndarray:
    """``int f_i dS`` for every edge, equal to centroid(T-) - centroid(T+)."""
    c = mesh.centroids()
    return c[edges.tri_minus] - c[edges.tri_plus]


# ---------------------------------------------------------------------------
# surface impedance term


def _triangle_gram(corners):
    """(nt, 3, 3): int_T (r - p_k).(r - p_l) dS for corners p_k (closed form)."""
    area = 0.5 * np.linalg.norm(np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]), axis=1)
    # E[t, k, m] = p_m - p_k
    E = corners[:, None, :, :] - corners[:, :, None, :]
    # int lambda_m lambda_n = A/12 (1 + delta_mn)
    S = np.einsum("tkmx,tlnx->tklmn", E, E)
    diag = np.einsum("tklmm->tkl", S)
    total = S.sum(axis=(3, 4))
    return area[:, None, None] / 12.0 * (total + diag)


def gram_matrix(mesh: SurfaceMesh, edges: EdgeSet) -> sp.csr_matrix:
    """Sparse ``G[i, j] = int f_i . f_j`` (nonzero only for edges sharing a triangle)."""
    coef = triangle_coefficients(mesh, edges)
    Q = _triangle_gram(mesh.corners()) * coef[:, :, None] * coef[:, None, :]
    rows = np.repeat(edges.tri_edges, 3, axis=1).ravel()
    cols = np.tile(edges.tri_edges, (1, 3)).ravel()
    G = sp.csr_matrix((Q.ravel(), (rows, cols)), shape=(edges.count, edges.count))
    G.sum_duplicates()
    return G


def assemble_Rb(mesh: SurfaceMesh, edges: EdgeSet, mat: Material, omega: float) -> sp.csr_matrix:
    return (surface_impedance(mat, omega) * gram_matrix(mesh, edges)).tocsr()


# ---------------------------------------------------------------------------
# partial inductance term


@dataclass(frozen=True)
class QuadratureOptions:
    """Rule selection for triangle pairs by centroid distance measured in
    units of the larger circumradius.

    Pairs sharing a vertex use ``singular`` (outer) with the closed-form
    inner integral; non-touching pairs closer than ``far_tiers[0][0]`` use
    ``near`` the same way; the rest use the product rule of the last tier
    whose threshold they reach.
    """

    far_tiers: tuple = ((2.0, 7), (3.0, 5), (6.0, 4), (16.0, "radon7"))
    singular: tuple = (8, 2.0)
    near: int = 6

    def doubled(self) -> "QuadratureOptions":
        """Rules of roughly twice the polynomial degree, for convergence checks."""
        tiers = tuple((d, 6 if n == "radon7" else 2 * n) for d, n in self.far_tiers)
        return QuadratureOptions(tiers, (2 * self.singular[0], self.singular[1]), 2 * self.near)

    def arrays(self):
        rules = [quadrature.radon7() if n == "radon7" else quadrature.stroud(n) for _, n in self.far_tiers]
        nmax = max(len(w) for _, w in rules)
        tier_uv = np.zeros((len(rules), nmax, 2))
        tier_w = np.zeros((len(rules), nmax))
        tier_n = np.zeros(len(rules), dtype=np.int64)
        for t, (uv, w) in enumerate(rules):
            tier_uv[t, : len(w)] = uv
            tier_w[t, : len(w)] = w
            tier_n[t] = len(w)
        tier_d = np.array([d for d, _ in self.far_tiers], dtype=float)
        sing_uv, sing_w = quadrature.graded(*self.singular)
        near_uv, near_w = quadrature.stroud(self.near)
        return tier_d, tier_uv, tier_w, tier_n, sing_uv, sing_w, near_uv, near_w


DEFAULT_QUADRATURE = QuadratureOptions()


def circumradius(corners) -> np.ndarray:
    a = np.linalg.norm(corners[:, 1] - corners[:, 2], axis=1)
    b = np.linalg.norm(corners[:, 2] - corners[:, 0], axis=1)
    c = np.linalg.norm(corners[:, 0] - corners[:, 1], axis=1)
    area = 0.5 * np.linalg.norm(np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]), axis=1)
    return a * b * c / (4 * area)


class _PairEvaluator:
    """Holds the per-triangle data the compiled kernels need."""

    def __init__(self, mesh: SurfaceMesh, quad: QuadratureOptions):
        self.verts = np.ascontiguousarray(mesh.vertices, dtype=float)
        self.tris = np.ascontiguousarray(mesh.triangles, dtype=np.int64)
        corners = mesh.corners()
        self.cent = np.ascontiguousarray(corners.mean(axis=1))
        self.area = np.ascontiguousarray(mesh.triangle_area)
        self.radius = np.ascontiguousarray(circumradius(corners))
        self.rules = quad.arrays()

    def blocks(self, pa, pb) -> np.ndarray:
        return _kernels.pair_blocks(
            np.ascontiguousarray(pa, dtype=np.int64), np.ascontiguousarray(pb, dtype=np.int64),
            self.verts, self.tris, self.cent, self.area, self.radius, *self.rules,
        )


def dense_bytes(n_edges: int) -> int:
    return 8 * n_edges * n_edges


DEFAULT_DENSE_CAP = 2 * 1024**3


def assemble_Lb_dense(mesh: SurfaceMesh, edges: EdgeSet, *, dense_cap=DEFAULT_DENSE_CAP,
                      quad: QuadratureOptions = DEFAULT_QUADRATURE, chunk_pairs=400_000) -> np.ndarray:
    """Dense partial inductance matrix (H), ``mu0/(4 pi)`` included.

    Every unordered triangle pair is integrated once and scattered to both
    mirrored entries, so the result is symmetric to rounding.

    Raises
    ------
    OutOfMemory
        The dense matrix would exceed ``dense_cap`` bytes.
    """
    ne = edges.count
    if dense_bytes(ne) > dense_cap:
        raise OutOfMemory(
            f"dense Lb for {ne} edges needs {dense_bytes(ne) / 2**30:.1f} GiB "
            f"(cap {dense_cap / 2**30:.1f} GiB); use the pfft backend"
        )
    ev = _PairEvaluator(mesh, quad)
    coef = np.ascontiguousarray(triangle_coefficients(mesh, edges))
    tri_edges = np.ascontiguousarray(edges.tri_edges)
    nt = mesh.n_triangles
    L = np.zeros((ne, ne))
    a0 = 0
    while a0 < nt:
        # rows a0..a1 with all partners b >= a
        count, a1 = 0, a0
        while a1 < nt and (count == 0 or count + (nt - a1) <= chunk_pairs):
            count += nt - a1
            a1 += 1
        pa = np.concatenate([np.full(nt - a, a) for a in range(a0, a1)])
        pb = np.concatenate([np.arange(a, nt) for a in range(a0, a1)])
        _kernels.scatter_dense(L, pa, pb, ev.blocks(pa, pb), tri_edges, coef)
        a0 = a1
    L *= MU0 / (4 * np.pi)
    return L


def _edge_slots(edges: EdgeSet):
    """Local index of each edge inside its plus and minus triangle."""
    ne = edges.count
    kp = np.empty(ne, dtype=np.int64)
    km = np.empty(ne, dtype=np.int64)
    t, k = np.nonzero(edges.tri_signs > 0)
    kp[edges.tri_edges[t, k]] = k
    t, k = np.nonzero(edges.tri_signs < 0)
    km[edges.tri_edges[t, k]] = k
    return kp, km


def lb_entries(mesh: SurfaceMesh, edges: EdgeSet, rows, cols, *,
               quad: QuadratureOptions = DEFAULT_QUADRATURE) -> np.ndarray:
    """Exact (same rules as the dense path) ``Lb[rows[i], cols[i]]`` values."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    if len(rows) == 0:
        return np.zeros(0)
    coef = triangle_coefficients(mesh, edges)
    kp, km = _edge_slots(edges)
    nt = mesh.n_triangles
    ti = np.concatenate([edges.tri_plus[rows]] * 2 + [edges.tri_minus[rows]] * 2)
    ki = np.concatenate([kp[rows]] * 2 + [km[rows]] * 2)
    tj = np.concatenate([edges.tri_plus[cols], edges.tri_minus[cols]] * 2)
    kj = np.concatenate([kp[cols], km[cols]] * 2)
    lo, hi = np.minimum(ti, tj), np.maximum(ti, tj)
    code = lo * nt + hi
    uniq, inv = np.unique(code, return_inverse=True)
    blocks = _PairEvaluator(mesh, quad).blocks(uniq // nt, uniq % nt)
    swapped = ti > tj
    k_first = np.where(swapped, kj, ki)
    k_second = np.where(swapped, ki, kj)
    vals = blocks[inv, k_first, k_second] * coef[ti, ki] * coef[tj, kj]
    return MU0 / (4 * np.pi) * vals.reshape(4, -1).sum(axis=0)


def lb_diagonal(mesh: SurfaceMesh, edges: EdgeSet, **kw) -> np.ndarray:
    idx = np.arange(edges.count)
    return lb_entries(mesh, edges, idx, idx, **kw)


# ---------------------------------------------------------------------------


@dataclass(eq=False)
class BranchOperator:
    """Frequency-independent pieces of ``Zb(w) = Zs(w) G + j w Lb``.

    ``Lb`` is a dense array or any object with ``apply(x)`` (the pFFT
    operator). ``pec=True`` forces ``Zs = 0``.
    """

    gram: sp.csr_matrix
    Lb: object
    lb_diag: np.ndarray
    material: Material
    pec: bool = False
    _gram_diag: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._gram_diag = self.gram.diagonal()

    @property
    def n(self) -> int:
        return self.gram.shape[0]

    @property
    def dense(self) -> bool:
        return isinstance(self.Lb, np.ndarray)

    def zs(self, omega: float) -> complex:
        return 0j if self.pec else surface_impedance(self.material, omega)

    def Rb(self, omega: float) -> sp.csr_matrix:
        return (self.zs(omega) * self.gram).tocsr()

    def apply_L(self, x) -> np.ndarray:
        if self.dense:
            return self.Lb @ x
        return self.Lb.apply(x)

    def apply(self, x, omega: float) -> np.ndarray:
        """``Rb x + j w (Lb x)``."""
        x = np.asarray(x)
        return self.zs(omega) * (self.gram @ x) + 1j * omega * self.apply_L(x)

    def diagonal(self, omega: float) -> np.ndarray:
        return self.zs(omega) * self._gram_diag + 1j * omega * self.lb_diag

    def matrix(self, omega: float) -> np.ndarray:
        if not self.dense:
            raise TypeError("matrix() needs the dense backend")
        return self.zs(omega) * self.gram.toarray() + 1j * omega * self.Lb


def branch_operator(mesh: SurfaceMesh, edges: EdgeSet, material: Material, *, pec=False,
                    dense_cap=DEFAULT_DENSE_CAP, quad: QuadratureOptions = DEFAULT_QUADRATURE) -> BranchOperator:
    """Dense-backend operator."""
    L = assemble_Lb_dense(mesh, edges, dense_cap=dense_cap, quad=quad)
    return BranchOperator(gram_matrix(mesh, edges), L, np.diag(L).copy(), material, pec)

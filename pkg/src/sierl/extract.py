"""Port excitation, multi-port impedance, sweeps, field reconstruction and
the modified-nodal-analysis reference solver."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import pfft as _pfft
from .assembly import (
    DEFAULT_DENSE_CAP,
    DEFAULT_QUADRATURE,
    BranchOperator,
    Material,
    QuadratureOptions,
    assemble_Lb_dense,
    gram_matrix,
    skin_depth,
)
from .circuit import SOURCE, CircuitGraph, LoopBasis, build_graph, loop_basis, loop_voltage
from .errors import (
    DimensionMismatch,
    InconsistentPotential,
    NonPositiveFrequency,
    OutOfBudget,
    SierlError,
    SingularY,
)
from .mesh import EdgeSet, SurfaceMesh, build_edges
from .solver import LoopSystem, build_preconditioner, gmres_solve

MNA_EDGE_LIMIT = 3000


@dataclass(eq=False)
class Model:
    """Everything that is frequency independent: mesh, graph, loops and the
    branch operator."""

    mesh: SurfaceMesh
    edges: EdgeSet
    graph: CircuitGraph
    basis: LoopBasis
    op: BranchOperator
    backend: str
    timings: dict = field(default_factory=dict)

    @property
    def port_names(self) -> list:
        return [p.name for p in self.graph.ports]

    def stats(self) -> dict:
        g = self.graph
        return {
            "triangles": self.mesh.n_triangles,
            "edges": self.edges.count,
            "n": g.n,
            "b": g.b,
            "s": g.s,
            "p": g.p,
            "l": self.basis.loop_count,
        }

    def memory_estimate(self) -> int:
        """Bytes held by the branch operator and loop matrix."""
        A = self.basis.A
        n = A.data.nbytes + A.indices.nbytes + A.indptr.nbytes
        G = self.op.gram
        n += G.data.nbytes + G.indices.nbytes + G.indptr.nbytes
        n += self.op.Lb.nbytes if self.op.dense else self.op.Lb.nbytes()
        return int(n)


def build_model(mesh: SurfaceMesh, ports, material: Material, *, backend="dense", pec=False,
                dense_cap=DEFAULT_DENSE_CAP, quad: QuadratureOptions = DEFAULT_QUADRATURE,
                spacing=None, order=2, margin=_pfft.DEFAULT_MARGIN, max_grid_nodes=_pfft.DEFAULT_MAX_NODES,
                edges: EdgeSet | None = None) -> Model:
    if backend not in ("dense", "pfft"):
        raise ValueError(f"unknown backend {backend!r}")
    t = {}
    t0 = time.perf_counter()
    edges = edges if edges is not None else build_edges(mesh)
    graph = build_graph(mesh, edges, ports)
    basis = loop_basis(graph)
    t["graph_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    G = gram_matrix(mesh, edges)
    if backend == "dense":
        L = assemble_Lb_dense(mesh, edges, dense_cap=dense_cap, quad=quad)
        op = BranchOperator(G, L, np.diag(L).copy(), material, pec)
    else:
        P = _pfft.build_operator(mesh, edges, spacing, order, margin=margin, max_nodes=max_grid_nodes, quad=quad)
        op = BranchOperator(G, P, P.diag, material, pec)
    t["assembly_s"] = time.perf_counter() - t0
    return Model(mesh, edges, graph, basis, op, backend, t)


@dataclass
class PortSolution:
    """Admittance-column solve at one frequency."""

    omega: float
    Z: np.ndarray
    Y: np.ndarray
    loop_currents: np.ndarray  # (l, p), column j = port j excited
    iterations: list
    residuals: list


def _check_Y(Y):
    p = Y.shape[0]
    if not np.all(np.isfinite(Y)):
        raise SingularY("admittance matrix has non-finite entries")
    s = np.linalg.svd(Y, compute_uv=False)
    if s[0] == 0 or s[-1] <= 1e-12 * s[0]:
        raise SingularY(
            f"admittance matrix of {p} port(s) is singular (condition {s[0] / max(s[-1], 1e-300):.2e}); "
            "ports may be shorted together"
        )


def extract_impedance(basis: LoopBasis, op: BranchOperator, omega: float, *, method="gmres", tol=1e-3,
                      restart=100, maxiter=None, precondition=True) -> PortSolution:
    """Excite each port with 1 V (others shorted), collect the source-loop
    currents as admittance columns, and invert.

    ``method`` is ``"gmres"`` or ``"direct"`` (dense LU, dense backend only).

    Raises
    ------
    SingularY
        The admittance matrix cannot be inverted.
    """
    if not omega > 0:
        raise NonPositiveFrequency(f"angular frequency must be positive, got {omega}")
    p = len(basis.source_loops)
    if p == 0:
        raise DimensionMismatch("no ports declared")
    system = LoopSystem(basis, op, omega)
    I = np.zeros((basis.loop_count, p), dtype=complex)
    iters, hist = [], []
    if method == "direct":
        Zl = system.matrix()
        for j in range(p):
            I[:, j] = np.linalg.solve(Zl, loop_voltage(basis, np.eye(p)[j]))
            iters.append(0)
            hist.append([])
    elif method == "gmres":
        pre = build_preconditioner(basis, op, omega) if precondition else None
        for j in range(p):
            res = gmres_solve(system, pre, loop_voltage(basis, np.eye(p)[j]), tol=tol, restart=restart,
                              maxiter=maxiter)
            I[:, j] = res.x
            iters.append(res.iterations)
            hist.append(res.residuals)
    else:
        raise ValueError(f"unknown method {method!r}")
    Y = I[basis.source_loops, :]
    _check_Y(Y)
    return PortSolution(omega, np.linalg.inv(Y), Y, I, iters, hist)


@dataclass
class ImpedanceResult:
    """Multi-port impedance over a frequency list.

    ``Z`` has shape (nf, p, p); failed points hold NaN and are flagged in
    ``failed`` with the error text in ``errors``.
    """

    frequencies: np.ndarray
    Z: np.ndarray
    valid: np.ndarray
    failed: np.ndarray
    port_names: list
    errors: dict = field(default_factory=dict)
    iterations: list = field(default_factory=list)
    solutions: list = field(default_factory=list, repr=False)

    @property
    def omega(self) -> np.ndarray:
        return 2 * np.pi * self.frequencies

    @property
    def R(self) -> np.ndarray:
        return self.Z.real

    @property
    def L(self) -> np.ndarray:
        return self.Z.imag / self.omega[:, None, None]

    def loop_quantities(self, i=0, j=1):
        """``R_o = R_ii - 2 R_ij + R_jj`` and the same for L, per frequency."""
        R, L = self.R, self.L
        return (R[:, i, i] - 2 * R[:, i, j] + R[:, j, j], L[:, i, i] - 2 * L[:, i, j] + L[:, j, j])


def validity(material: Material, frequencies, thickness=None, pec=False) -> np.ndarray:
    """Surface-impedance validity: skin depth at most a third of the
    thinnest conductor dimension."""
    f = np.asarray(frequencies, dtype=float)
    if thickness is None or pec:
        return np.ones(len(f), dtype=bool)
    return np.array([skin_depth(material, 2 * np.pi * fi) <= thickness / 3 for fi in f])


def frequency_sweep(model: Model, frequencies, *, thickness=None, method="gmres", tol=1e-3, restart=100,
                    maxiter=None, precondition=True, keep_solutions=False) -> ImpedanceResult:
    """Solve every frequency with one shared model. Solver failures at a
    point are recorded and the sweep continues."""
    f = np.asarray(frequencies, dtype=float)
    if f.ndim != 1 or len(f) == 0:
        raise ValueError("frequency list must be a nonempty 1-D sequence")
    if np.any(f <= 0):
        raise NonPositiveFrequency("all frequencies must be positive")
    if np.any(np.diff(f) <= 0):
        raise ValueError("frequencies must be strictly ascending")
    p = model.graph.p
    Z = np.full((len(f), p, p), np.nan + 0j)
    failed = np.zeros(len(f), dtype=bool)
    errors, iters, sols = {}, [], []
    for k, fk in enumerate(f):
        try:
            sol = extract_impedance(model.basis, model.op, 2 * np.pi * fk, method=method, tol=tol,
                                    restart=restart, maxiter=maxiter, precondition=precondition)
        except SierlError as exc:
            failed[k] = True
            errors[k] = f"{exc.category}: {exc}"
            iters.append(getattr(exc, "iterations", None))
            sols.append(None)
            continue
        Z[k] = sol.Z
        iters.append(sol.iterations)
        sols.append(sol if keep_solutions else None)
    valid = validity(model.op.material, f, thickness, model.op.pec) & ~failed
    return ImpedanceResult(f, Z, valid, failed, model.port_names, errors, iters, sols)


# ---------------------------------------------------------------------------
# fields


@dataclass
class FieldSolution:
    """Branch currents (A) on mesh edges and potentials (V) per triangle for
    one excited port. ``closure`` is the largest KVL mismatch over links."""

    port: int
    branch_currents: np.ndarray
    potentials: np.ndarray
    node_potentials: np.ndarray = field(repr=False)
    closure: float = 0.0

    def current_density(self, mesh: SurfaceMesh, edges: EdgeSet) -> np.ndarray:
        """Surface current density at each triangle centroid (A/m), shape (nt, 3)."""
        c = mesh.centroids()
        coef = edges.tri_signs / (2 * mesh.triangle_area[:, None])
        I = self.branch_currents[edges.tri_edges]  # (nt, 3)
        free = mesh.corners()  # local edge k is opposite corner k
        return np.einsum("tk,tkx->tx", I * coef, c[:, None, :] - free)


def field_solution(basis: LoopBasis, op: BranchOperator, omega: float, loop_currents, port: int,
                   excitation=None, tol=1e-6) -> FieldSolution:
    """Branch currents ``I_b = A^T I_l`` and triangle potentials integrated
    along twigs from the excited port's sink terminal (held at 0 V).

    Raises
    ------
    InconsistentPotential
        Some link's KVL closure misses by more than ``tol`` volts.
    """
    graph = _graph_of(basis)
    p = len(basis.source_loops)
    excitation = np.eye(p)[port] if excitation is None else np.asarray(excitation, dtype=complex)
    I_l = np.asarray(loop_currents)
    if I_l.shape != (basis.loop_count,):
        raise DimensionMismatch(f"expected {basis.loop_count} loop currents, got {I_l.shape}")
    I_all = basis.A.T @ I_l
    ne = basis.n_edges
    drop = np.zeros(graph.b, dtype=complex)
    drop[:ne] = op.apply(I_all[:ne], omega)
    src = graph.source_branches
    drop[src] = -excitation  # phi(from) - phi(to) across a source is -V
    forest = basis.forest
    n = graph.n
    phi = np.zeros(n, dtype=complex)
    order = np.argsort(forest.depth, kind="stable")
    frm, to = graph.branch_from, graph.branch_to
    for v in order:
        br = forest.parent_branch[v]
        if br < 0:
            continue
        u = forest.parent[v]
        phi[v] = phi[u] - drop[br] if frm[br] == u else phi[u] + drop[br]
    ref = graph.sink_terminal(port)
    comp = forest.root == forest.root[ref]
    phi[comp] -= phi[ref]
    # components without this port carry no current; pin their roots
    for r in np.unique(forest.root[~comp]):
        sel = forest.root == r
        phi[sel] -= phi[r]
    links = basis.links
    mismatch = phi[frm[links]] - phi[to[links]] - drop[links]
    closure = float(np.abs(mismatch).max()) if len(links) else 0.0
    if closure > tol:
        raise InconsistentPotential(
            f"potential closure error {closure:.3e} V exceeds {tol:.1e} V; the loop solve has not converged"
        )
    return FieldSolution(port, I_all[:ne], phi[: graph.n_triangles], phi, closure)


def _graph_of(basis: LoopBasis) -> CircuitGraph:
    g = getattr(basis, "graph", None)
    if g is None:
        raise TypeError("loop basis does not carry its circuit graph")
    return g


# ---------------------------------------------------------------------------
# modified nodal analysis reference


def mna_solve(graph: CircuitGraph, op: BranchOperator, omega: float):
    """Direct solve of the (b + n) branch-current / node-potential system.

    Unknowns: all branch currents, then all node potentials. One node per
    conductor (its lowest id) is grounded, replacing that node's KCL row.

    Returns
    -------
    Z : (p, p) complex
    currents : (b, p) complex, branch currents for each unit excitation
    dimension : int

    Raises
    ------
    OutOfBudget
        More than 3000 mesh edges.
    """
    ne = graph.n_edges
    if ne > MNA_EDGE_LIMIT:
        raise OutOfBudget(f"MNA reference limited to {MNA_EDGE_LIMIT} edges, mesh has {ne}")
    if not omega > 0:
        raise NonPositiveFrequency(f"angular frequency must be positive, got {omega}")
    b, n, p = graph.b, graph.n, graph.p
    N = b + n
    M = np.zeros((N, N), dtype=complex)
    M[:ne, :ne] = op.matrix(omega)
    D = graph.incidence().toarray().astype(float)  # n x b
    # branch rows: Z I - (phi_from - phi_to) = rhs
    M[:b, b:] = -D.T
    # node rows: KCL, except one grounded node per conductor
    M[b:, :b] = D
    keep = np.flatnonzero(graph.branch_kind != SOURCE)
    g = sp.coo_matrix((np.ones(len(keep)), (graph.branch_from[keep], graph.branch_to[keep])), shape=(n, n))
    _, labels = sp.csgraph.connected_components(g, directed=False)
    grounds = np.array([np.flatnonzero(labels == c)[0] for c in range(labels.max() + 1)])
    M[b + grounds, :] = 0.0
    M[b + grounds, b + grounds] = 1.0
    rhs = np.zeros((N, p), dtype=complex)
    src = graph.source_branches
    rhs[src, np.arange(p)] = 1.0  # -(phi_from - phi_to) = V across the source
    x = np.linalg.solve(M, rhs)
    Y = x[src, :]
    _check_Y(Y)
    return np.linalg.inv(Y), x[:b], N


def mna_oracle(mesh: SurfaceMesh, edges: EdgeSet, ports, op: BranchOperator, omega: float) -> np.ndarray:
    graph = build_graph(mesh, edges, ports)
    return mna_solve(graph, op, omega)[0]

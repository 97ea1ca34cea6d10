"""Circuit view of the discretized surface and its fundamental-loop basis.

Triangles become nodes and interior edges become branches. Each port adds a
source terminal and a sink terminal node, zero-impedance contact branches
from the terminals to their triangles, and one voltage-source branch from
the sink terminal to the source terminal.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components as _cc

from .errors import CircuitError, DimensionMismatch, DisconnectedPort, EmptyPort, OverlappingPorts
from .mesh import EdgeSet, SurfaceMesh

MESH, CONTACT, SOURCE = 0, 1, 2


@dataclass(frozen=True)
class PortSpec:
    name: str
    source_triangles: tuple
    sink_triangles: tuple

    def __post_init__(self):
        object.__setattr__(self, "source_triangles", tuple(sorted(int(t) for t in self.source_triangles)))
        object.__setattr__(self, "sink_triangles", tuple(sorted(int(t) for t in self.sink_triangles)))


@dataclass(frozen=True, eq=False)
class CircuitGraph:
    """Node/branch graph with ports attached.

    Node ids: triangles ``0..nt-1``, then per port ``k`` the source terminal
    ``nt + 2k`` and the sink terminal ``nt + 2k + 1``. Branch ids: mesh edges
    first (same numbering as the EdgeSet), then contact branches port by
    port, then the ``p`` source branches.
    """

    n_triangles: int
    n_edges: int
    branch_from: np.ndarray
    branch_to: np.ndarray
    branch_kind: np.ndarray
    branch_port: np.ndarray
    ports: tuple
    n_components: int

    @property
    def n(self) -> int:
        return self.n_triangles + 2 * len(self.ports)

    @property
    def b(self) -> int:
        return len(self.branch_from)

    @property
    def s(self) -> int:
        return self.n_components

    @property
    def p(self) -> int:
        return len(self.ports)

    @property
    def source_branches(self) -> np.ndarray:
        return np.arange(self.b - self.p, self.b)

    def source_terminal(self, k: int) -> int:
        return self.n_triangles + 2 * k

    def sink_terminal(self, k: int) -> int:
        return self.n_triangles + 2 * k + 1

    def incidence(self) -> sp.csr_matrix:
        """Signed node x branch incidence: +1 at the from node, -1 at the to node."""
        cols = np.arange(self.b)
        data = np.concatenate([np.ones(self.b, dtype=np.int64), -np.ones(self.b, dtype=np.int64)])
        return sp.csr_matrix(
            (data, (np.concatenate([self.branch_from, self.branch_to]), np.concatenate([cols, cols]))),
            shape=(self.n, self.b),
        )


@dataclass(frozen=True, eq=False)
class Forest:
    twig: np.ndarray
    parent: np.ndarray
    parent_branch: np.ndarray
    depth: np.ndarray
    root: np.ndarray

    @property
    def n_twigs(self) -> int:
        return int(self.twig.sum())


@dataclass(frozen=True, eq=False)
class LoopBasis:
    """Fundamental loops: row ``r`` of ``A`` is the loop closed by ``links[r]``.

    ``A`` is stored as float64 CSR with entries exactly in {-1, 0, +1}.
    ``source_loops[k]`` is the row whose link is port ``k``'s source branch.
    """

    forest: Forest
    links: np.ndarray
    A: sp.csr_matrix
    source_loops: np.ndarray
    n_edges: int
    graph: CircuitGraph | None = None

    @property
    def loop_count(self) -> int:
        return len(self.links)

    @property
    def twigs(self) -> np.ndarray:
        return np.flatnonzero(self.forest.twig)

    @property
    def A_mesh(self) -> sp.csr_matrix:
        """Columns of ``A`` belonging to mesh edges (the only branches with impedance)."""
        return self.A[:, : self.n_edges].tocsr()


def _check_ports(mesh: SurfaceMesh, ports):
    seen = {}
    for k, port in enumerate(ports):
        if not port.source_triangles or not port.sink_triangles:
            raise EmptyPort(f"port {port.name!r} needs nonempty source and sink triangle sets")
        for side in (port.source_triangles, port.sink_triangles):
            for t in side:
                if not 0 <= t < mesh.n_triangles:
                    raise CircuitError(f"port {port.name!r}: triangle {t} is not on the mesh")
                if t in seen:
                    raise OverlappingPorts(
                        f"triangle {t} is used by port {ports[seen[t]].name!r} and port {port.name!r}"
                    )
                seen[t] = k


def build_graph(mesh: SurfaceMesh, edges: EdgeSet, ports=()) -> CircuitGraph:
    ports = tuple(ports)
    _check_ports(mesh, ports)
    nt, ne = mesh.n_triangles, edges.count
    frm = [edges.tri_plus]
    to = [edges.tri_minus]
    kind = [np.full(ne, MESH)]
    port_of = [np.full(ne, -1)]
    for k, port in enumerate(ports):
        src = np.asarray(port.source_triangles, dtype=np.int64)
        snk = np.asarray(port.sink_triangles, dtype=np.int64)
        frm += [np.full(len(src), nt + 2 * k), snk]
        to += [src, np.full(len(snk), nt + 2 * k + 1)]
        kind.append(np.full(len(src) + len(snk), CONTACT))
        port_of.append(np.full(len(src) + len(snk), k))
    p = len(ports)
    frm.append(nt + 2 * np.arange(p) + 1)
    to.append(nt + 2 * np.arange(p))
    kind.append(np.full(p, SOURCE))
    port_of.append(np.arange(p))
    frm, to = np.concatenate(frm).astype(np.int64), np.concatenate(to).astype(np.int64)
    kind = np.concatenate(kind).astype(np.int8)
    n = nt + 2 * p
    keep = kind != SOURCE
    g = sp.coo_matrix((np.ones(keep.sum()), (frm[keep], to[keep])), shape=(n, n))
    s, _ = _cc(g, directed=False)
    return CircuitGraph(nt, ne, frm, to, kind, np.concatenate(port_of).astype(np.int64), ports, int(s))


def _adjacency(graph: CircuitGraph):
    """CSR adjacency over non-source branches; contacts listed before mesh
    edges, each group by ascending branch id."""
    keep = np.flatnonzero(graph.branch_kind != SOURCE)
    ends = np.concatenate([graph.branch_from[keep], graph.branch_to[keep]])
    other = np.concatenate([graph.branch_to[keep], graph.branch_from[keep]])
    br = np.concatenate([keep, keep])
    is_mesh = (graph.branch_kind[br] == MESH).astype(np.int64)
    order = np.lexsort((br, is_mesh, ends))
    ptr = np.zeros(graph.n + 1, dtype=np.int64)
    np.add.at(ptr, ends + 1, 1)
    return np.cumsum(ptr), br[order], other[order], is_mesh[order]


def spanning_forest(graph: CircuitGraph) -> Forest:
    """Breadth-first spanning forest.

    Each component is rooted at its lowest node id. Whenever a node joins
    the tree, every node reachable from it through contact branches joins
    immediately, so all contact branches end up as twigs. Source branches are
    never twigs.
    """
    n = graph.n
    ptr, nbr_branch, nbr_node, nbr_mesh = _adjacency(graph)
    parent = np.full(n, -1, dtype=np.int64)
    parent_branch = np.full(n, -1, dtype=np.int64)
    depth = np.zeros(n, dtype=np.int64)
    root = np.full(n, -1, dtype=np.int64)
    twig = np.zeros(graph.b, dtype=bool)

    def claim(v, u, br, r, queue):
        stack = [(v, u, br)]
        while stack:
            v, u, br = stack.pop()
            if root[v] >= 0:
                continue
            root[v] = r
            parent[v] = u
            parent_branch[v] = br
            if br >= 0:
                twig[br] = True
                depth[v] = depth[u] + 1
            queue.append(v)
            lo, hi = ptr[v], ptr[v + 1]
            # contacts sort first; push in reverse so the lowest id pops first
            for j in range(hi - 1, lo - 1, -1):
                if not nbr_mesh[j] and root[nbr_node[j]] < 0:
                    stack.append((nbr_node[j], v, nbr_branch[j]))

    for r in range(n):
        if root[r] >= 0:
            continue
        queue = deque()
        claim(r, -1, -1, r, queue)
        while queue:
            u = queue.popleft()
            for j in range(ptr[u], ptr[u + 1]):
                v = nbr_node[j]
                if root[v] < 0:
                    claim(v, u, nbr_branch[j], r, queue)
    return Forest(twig, parent, parent_branch, depth, root)


def fundamental_loops(graph: CircuitGraph, forest: Forest) -> LoopBasis:
    """One loop per link: the link plus the tree path closing it, oriented
    along the link."""
    links = np.flatnonzero(~forest.twig)
    frm, to = graph.branch_from, graph.branch_to
    parent, pbr, depth, root = forest.parent, forest.parent_branch, forest.depth, forest.root
    rows, cols, vals = [], [], []
    for r, e in enumerate(links):
        u, v = frm[e], to[e]
        if root[u] != root[v]:
            raise DisconnectedPort(
                f"source branch of port {graph.ports[graph.branch_port[e]].name!r} joins "
                "separate conductors; no closed current path exists"
            )
        rows.append(r)
        cols.append(e)
        vals.append(1)
        # walk v upward (traversal child -> parent), then u upward (reversed:
        # traversal parent -> child) until the two walks meet
        a, b = v, u
        while a != b:
            if depth[a] >= depth[b]:
                br = pbr[a]
                rows.append(r)
                cols.append(br)
                vals.append(1 if frm[br] == a else -1)
                a = parent[a]
            else:
                br = pbr[b]
                rows.append(r)
                cols.append(br)
                vals.append(1 if frm[br] == parent[b] else -1)
                b = parent[b]
    A = sp.csr_matrix(
        (np.asarray(vals, dtype=float), (np.asarray(rows), np.asarray(cols))),
        shape=(len(links), graph.b),
    )
    A.sort_indices()
    pos = {int(e): r for r, e in enumerate(links)}
    source_loops = np.array([pos[int(e)] for e in graph.source_branches], dtype=np.int64)
    return LoopBasis(forest, links, A, source_loops, graph.n_edges, graph)


def loop_basis(graph: CircuitGraph) -> LoopBasis:
    return fundamental_loops(graph, spanning_forest(graph))


def loop_voltage(basis: LoopBasis, excitation) -> np.ndarray:
    """Loop source vector: +V_k on port k's source loop, zero elsewhere."""
    excitation = np.atleast_1d(np.asarray(excitation, dtype=complex))
    if excitation.shape != basis.source_loops.shape:
        raise DimensionMismatch(
            f"expected {len(basis.source_loops)} port voltages, got {excitation.shape[0]}"
        )
    v = np.zeros(basis.loop_count, dtype=complex)
    v[basis.source_loops] = excitation
    return v


def to_branch(basis: LoopBasis, loop_currents) -> np.ndarray:
    x = np.asarray(loop_currents)
    if x.shape[0] != basis.loop_count:
        raise DimensionMismatch(f"expected {basis.loop_count} loop currents, got {x.shape[0]}")
    return basis.A.T @ x


def to_loop(basis: LoopBasis, branch_voltages) -> np.ndarray:
    x = np.asarray(branch_voltages)
    if x.shape[0] != basis.A.shape[1]:
        raise DimensionMismatch(f"expected {basis.A.shape[1]} branch values, got {x.shape[0]}")
    return basis.A @ x


# ---------------------------------------------------------------------------
# port selection helpers


def triangles_in_box(mesh: SurfaceMesh, lower, upper, tol=0.0) -> np.ndarray:
    """Triangles whose three corners all lie in the closed axis-aligned box."""
    lower = np.asarray(lower, dtype=float) - tol
    upper = np.asarray(upper, dtype=float) + tol
    c = mesh.corners()
    inside = np.all((c >= lower) & (c <= upper), axis=(1, 2))
    return np.flatnonzero(inside)


def triangles_with_tag(mesh: SurfaceMesh, tag: int) -> np.ndarray:
    return np.flatnonzero(mesh.triangle_tag == tag)

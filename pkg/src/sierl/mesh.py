"""Closed triangulated conductor surfaces: loading, welding, validation and
edge (branch) construction."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _cc
from scipy.spatial import cKDTree

from .errors import DegenerateTriangle, OpenSurface, OrientationError, ParseError

WELD_TOL = 1e-12
FORMATS = ("msh-ascii", "stl-ascii", "stl-binary")


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Validated closed triangulated surface of one or more conductors.

    Attributes
    ----------
    vertices : (nv, 3) float array, meters
    triangles : (nt, 3) int array, counter-clockwise seen from outside
    triangle_area : (nt,) float array, m^2
    triangle_conductor : (nt,) int array
        Connected component label of each triangle, numbered in order of the
        lowest triangle index in the component.
    triangle_tag : (nt,) int array
        Physical tag from the source file (MSH), zero otherwise.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    triangle_area: np.ndarray
    triangle_conductor: np.ndarray
    triangle_tag: np.ndarray = field(repr=False)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_conductors(self) -> int:
        return int(self.triangle_conductor.max()) + 1 if self.n_triangles else 0

    def corners(self) -> np.ndarray:
        """(nt, 3, 3) array of triangle corner coordinates."""
        return self.vertices[self.triangles]

    def centroids(self) -> np.ndarray:
        return self.corners().mean(axis=1)

    def normals(self) -> np.ndarray:
        c = self.corners()
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return n / np.linalg.norm(n, axis=1)[:, None]


@dataclass(frozen=True, eq=False)
class EdgeSet:
    """Interior edges of a closed mesh, i.e. the modified RWG unknowns.

    Edge ``i`` joins ``tri_plus[i]`` (lower triangle index) and
    ``tri_minus[i]``; positive current flows from plus to minus.
    ``vertex_a -> vertex_b`` is the edge as traversed inside the plus triangle.
    ``tri_edges[t, k]`` is the edge opposite local vertex ``k`` of triangle
    ``t`` and ``tri_signs[t, k]`` is +1 where ``t`` is that edge's plus side.
    """

    tri_plus: np.ndarray
    tri_minus: np.ndarray
    vertex_a: np.ndarray
    vertex_b: np.ndarray
    opposite_plus: np.ndarray
    opposite_minus: np.ndarray
    tri_edges: np.ndarray
    tri_signs: np.ndarray

    @property
    def count(self) -> int:
        return len(self.tri_plus)

    def __len__(self) -> int:
        return self.count


def weld_vertices(vertices, triangles, tol=WELD_TOL):
    """Merge vertices closer than ``tol`` (absolute, meters).

    Returns the compacted vertex array and the re-indexed triangles. The
    surviving vertex of each cluster is the one with the lowest index.
    """
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)
    nv = len(vertices)
    if nv == 0:
        return vertices.reshape(0, 3), triangles.reshape(0, 3)
    pairs = cKDTree(vertices).query_pairs(r=tol, output_type="ndarray")
    if len(pairs):
        g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(nv, nv))
        _, labels = _cc(g, directed=False)
        rep = np.full(labels.max() + 1, nv)
        np.minimum.at(rep, labels, np.arange(nv))
        root = rep[labels]
    else:
        root = np.arange(nv)
    used = np.unique(root[triangles.ravel()])
    remap = np.full(nv, -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return vertices[used], remap[root[triangles]]


def make_mesh(vertices, triangles, *, tags=None, weld_tol=WELD_TOL) -> SurfaceMesh:
    """Weld, validate and label a triangle soup.

    Raises
    ------
    DegenerateTriangle
        A triangle repeats a vertex or has (numerically) zero area.
    OpenSurface
        Some edge is not shared by exactly two triangles.
    OrientationError
        Two neighbours traverse their shared edge in the same direction.
    """
    verts, tris = weld_vertices(vertices, triangles, weld_tol)
    nt = len(tris)
    if nt == 0:
        raise ParseError("mesh contains no triangles")
    bad = (tris[:, 0] == tris[:, 1]) | (tris[:, 1] == tris[:, 2]) | (tris[:, 0] == tris[:, 2])
    if bad.any():
        raise DegenerateTriangle(f"triangle {int(np.flatnonzero(bad)[0])} repeats a vertex")
    c = verts[tris]
    cr = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    area = 0.5 * np.linalg.norm(cr, axis=1)
    longest = np.max(np.linalg.norm(c - np.roll(c, 1, axis=1), axis=2), axis=1)
    flat = area <= 1e-10 * longest**2
    if flat.any():
        raise DegenerateTriangle(f"triangle {int(np.flatnonzero(flat)[0])} has zero area")

    _check_manifold(tris, len(verts))
    labels = _component_labels(tris, len(verts))
    if tags is None:
        tags = np.zeros(nt, dtype=np.int64)
    return SurfaceMesh(verts, tris, area, labels, np.asarray(tags, dtype=np.int64))


def _directed_edges(tris):
    a = tris[:, [1, 2, 0]].ravel()
    b = tris[:, [2, 0, 1]].ravel()
    return a, b


def _check_manifold(tris, nv):
    a, b = _directed_edges(tris)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    key = lo * nv + hi
    uniq, counts = np.unique(key, return_counts=True)
    if (counts != 2).any():
        k = uniq[np.flatnonzero(counts != 2)[0]]
        n = counts[counts != 2][0]
        raise OpenSurface(f"edge ({k // nv}, {k % nv}) is shared by {n} triangle(s)")
    dkey = a * nv + b
    if len(np.unique(dkey)) != len(dkey):
        dup = np.sort(dkey)
        k = dup[np.flatnonzero(np.diff(dup) == 0)[0]]
        raise OrientationError(
            f"edge ({k // nv}, {k % nv}) is traversed twice in the same direction"
        )


def _component_labels(tris, nv):
    nt = len(tris)
    a, b = _directed_edges(tris)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    key = lo * nv + hi
    order = np.argsort(key, kind="stable")
    owner = np.repeat(np.arange(nt), 3)[order]
    t1, t2 = owner[0::2], owner[1::2]
    g = coo_matrix((np.ones(len(t1)), (t1, t2)), shape=(nt, nt))
    _, raw = _cc(g, directed=False)
    # scipy numbers components by first-visited node, which is the lowest index
    return raw.astype(np.int64)


def build_edges(mesh: SurfaceMesh) -> EdgeSet:
    """Enumerate interior edges with a deterministic order and orientation.

    Edges are sorted by their (smaller, larger) vertex index pair; the plus
    triangle is the lower triangle index of the two.
    """
    tris = mesh.triangles
    nt, nv = len(tris), mesh.n_vertices
    a, b = _directed_edges(tris)
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    key = lo * nv + hi
    order = np.lexsort((np.repeat(np.arange(nt), 3), key))
    slot = order  # flat index t*3 + k
    first, second = slot[0::2], slot[1::2]
    ne = len(first)
    t_first, t_second = first // 3, second // 3
    # lexsort on (tri, key) puts the lower triangle first
    tp, tm = t_first, t_second
    kp, km = first % 3, second % 3
    tri_edges = np.empty((nt, 3), dtype=np.int64)
    tri_signs = np.empty((nt, 3), dtype=np.int64)
    idx = np.arange(ne)
    tri_edges[tp, kp] = idx
    tri_edges[tm, km] = idx
    tri_signs[tp, kp] = 1
    tri_signs[tm, km] = -1
    return EdgeSet(
        tri_plus=tp,
        tri_minus=tm,
        vertex_a=a[first],
        vertex_b=b[first],
        opposite_plus=tris[tp, kp],
        opposite_minus=tris[tm, km],
        tri_edges=tri_edges,
        tri_signs=tri_signs,
    )


def connected_components(mesh: SurfaceMesh) -> int:
    """Number of fully separated conductors in the mesh."""
    return mesh.n_conductors


def merge(*meshes: SurfaceMesh) -> SurfaceMesh:
    """Concatenate meshes (no welding across inputs)."""
    verts, tris, tags, off = [], [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + off)
        tags.append(m.triangle_tag)
        off += m.n_vertices
    return make_mesh(np.vstack(verts), np.vstack(tris), tags=np.concatenate(tags), weld_tol=0.0)


# ---------------------------------------------------------------------------
# file formats


def detect_format(path) -> str:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".msh":
        return "msh-ascii"
    if suffix != ".stl":
        raise ParseError(f"cannot infer mesh format from suffix {suffix!r}")
    size = path.stat().st_size
    with open(path, "rb") as fh:
        head = fh.read(84)
    if len(head) >= 84:
        (count,) = struct.unpack("<I", head[80:84])
        if 84 + 50 * count == size:
            return "stl-binary"
    return "stl-ascii"


def load_mesh(path, format=None, *, weld_tol=WELD_TOL, scale=1.0) -> SurfaceMesh:
    """Read a closed surface from Gmsh MSH 2.2 ASCII or STL (ASCII/binary).

    ``scale`` multiplies coordinates (e.g. 1e-6 for files in micrometers).
    """
    path = Path(path)
    if format is None:
        format = detect_format(path)
    if format not in FORMATS:
        raise ParseError(f"unknown mesh format {format!r}; expected one of {FORMATS}")
    if format == "msh-ascii":
        verts, tris, tags = _read_msh(path)
    elif format == "stl-ascii":
        verts, tris = _read_stl_ascii(path)
        tags = None
    else:
        verts, tris = _read_stl_binary(path)
        tags = None
    return make_mesh(np.asarray(verts) * scale, tris, tags=tags, weld_tol=weld_tol)


def _read_msh(path):
    try:
        lines = Path(path).read_text().splitlines()
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not an ASCII MSH file") from exc
    sections = {}
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        if line.startswith("$") and not line.startswith("$End"):
            name = line[1:]
            j = i + 1
            while j < len(lines) and lines[j].strip() != f"$End{name}":
                j += 1
            if j == len(lines):
                raise ParseError(f"{path}: section ${name} is not terminated")
            sections[name] = lines[i + 1 : j]
            i = j
        i += 1
    if "MeshFormat" in sections:
        fmt = sections["MeshFormat"][0].split()
        if not fmt[0].startswith("2") or fmt[1] != "0":
            raise ParseError(f"{path}: only ASCII MSH 2.x is supported, got {fmt[:2]}")
    if "Nodes" not in sections or "Elements" not in sections:
        raise ParseError(f"{path}: missing $Nodes or $Elements")
    try:
        body = sections["Nodes"]
        n = int(body[0])
        ids = np.empty(n, dtype=np.int64)
        xyz = np.empty((n, 3))
        for k in range(n):
            parts = body[1 + k].split()
            ids[k] = int(parts[0])
            xyz[k] = [float(p) for p in parts[1:4]]
        index = {nid: k for k, nid in enumerate(ids)}
        body = sections["Elements"]
        m = int(body[0])
        tris, tags = [], []
        for k in range(m):
            parts = [int(p) for p in body[1 + k].split()]
            etype, ntags = parts[1], parts[2]
            if etype != 2:
                continue
            tags.append(parts[3] if ntags > 0 else 0)
            tris.append([index[v] for v in parts[3 + ntags : 6 + ntags]])
    except (ValueError, IndexError, KeyError) as exc:
        raise ParseError(f"{path}: malformed MSH body ({exc})") from exc
    return xyz, np.array(tris, dtype=np.int64).reshape(-1, 3), np.array(tags, dtype=np.int64)


def _read_stl_ascii(path):
    try:
        tokens = Path(path).read_text().split()
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not an ASCII STL file") from exc
    if not tokens or tokens[0].lower() != "solid":
        raise ParseError(f"{path}: ASCII STL must start with 'solid'")
    verts = []
    try:
        for i, tok in enumerate(tokens):
            if tok.lower() == "vertex":
                verts.append([float(tokens[i + 1]), float(tokens[i + 2]), float(tokens[i + 3])])
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: malformed vertex record") from exc
    if len(verts) % 3:
        raise ParseError(f"{path}: vertex count {len(verts)} is not a multiple of 3")
    verts = np.array(verts, dtype=float).reshape(-1, 3)
    return verts, np.arange(len(verts)).reshape(-1, 3)


_STL_RECORD = np.dtype(
    [("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")]
)


def _read_stl_binary(path):
    data = Path(path).read_bytes()
    if len(data) < 84:
        raise ParseError(f"{path}: truncated binary STL header")
    (count,) = struct.unpack("<I", data[80:84])
    if len(data) != 84 + 50 * count:
        raise ParseError(f"{path}: expected {count} facets, file size does not match")
    rec = np.frombuffer(data, dtype=_STL_RECORD, count=count, offset=84)
    verts = rec["v"].reshape(-1, 3).astype(float)
    return verts, np.arange(len(verts)).reshape(-1, 3)


def save_mesh(mesh: SurfaceMesh, path, format=None):
    """Write ``mesh`` as MSH 2.2 ASCII, ASCII STL or binary STL."""
    path = Path(path)
    if format is None:
        format = "msh-ascii" if path.suffix.lower() == ".msh" else "stl-binary"
    v, t = mesh.vertices, mesh.triangles
    if format == "msh-ascii":
        with open(path, "w") as fh:
            fh.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n")
            fh.write(f"{len(v)}\n")
            for i, p in enumerate(v):
                fh.write(f"{i + 1} {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
            fh.write("$EndNodes\n$Elements\n")
            fh.write(f"{len(t)}\n")
            for i, (tri, tag) in enumerate(zip(t, mesh.triangle_tag)):
                fh.write(f"{i + 1} 2 2 {tag} {tag} {tri[0] + 1} {tri[1] + 1} {tri[2] + 1}\n")
            fh.write("$EndElements\n")
    elif format == "stl-ascii":
        n = mesh.normals()
        with open(path, "w") as fh:
            fh.write("solid mesh\n")
            for tri, nn in zip(t, n):
                fh.write(f"facet normal {nn[0]:.9e} {nn[1]:.9e} {nn[2]:.9e}\n outer loop\n")
                for p in v[tri]:
                    fh.write(f"  vertex {p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
                fh.write(" endloop\nendfacet\n")
            fh.write("endsolid mesh\n")
    elif format == "stl-binary":
        rec = np.zeros(len(t), dtype=_STL_RECORD)
        rec["normal"] = mesh.normals()
        rec["v"] = v[t]
        with open(path, "wb") as fh:
            fh.write(b"sierl binary stl".ljust(80, b"\0"))
            fh.write(struct.pack("<I", len(t)))
            fh.write(rec.tobytes())
    else:
        raise ParseError(f"unknown mesh format {format!r}")

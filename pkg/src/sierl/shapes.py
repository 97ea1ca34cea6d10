"""Canonical closed solids used for validation runs and examples.

These are fixtures, not a mesher: structured boxes, the triangular prism used
as the smallest benchmark, Platonic solids, rings and convex hulls.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import ConvexHull

from .mesh import SurfaceMesh, make_mesh, merge


def _orient_outward(verts, tris):
    """Flip triangles so all normals point away from the solid (consistent
    orientation propagated over neighbours, sign fixed by enclosed volume)."""
    tris = np.array(tris, dtype=np.int64)
    nt = len(tris)
    owner = {}
    for t, tri in enumerate(tris):
        for k in range(3):
            a, b = tri[(k + 1) % 3], tri[(k + 2) % 3]
            owner.setdefault((min(a, b), max(a, b)), []).append(t)
    done = np.zeros(nt, dtype=bool)
    for seed in range(nt):
        if done[seed]:
            continue
        done[seed] = True
        stack = [seed]
        comp = [seed]
        while stack:
            t = stack.pop()
            tri = tris[t]
            for k in range(3):
                a, b = tri[(k + 1) % 3], tri[(k + 2) % 3]
                for u in owner[(min(a, b), max(a, b))]:
                    if u == t or done[u]:
                        continue
                    # neighbour must traverse (b, a)
                    ut = list(tris[u])
                    i = ut.index(a)
                    if ut[(i + 1) % 3] == b:
                        tris[u] = tris[u][::-1]
                    done[u] = True
                    stack.append(u)
                    comp.append(u)
        c = verts[tris[comp]]
        vol = np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum()
        if vol < 0:
            tris[comp] = tris[comp][:, ::-1]
    return tris


def from_soup(verts, tris) -> SurfaceMesh:
    verts = np.asarray(verts, dtype=float)
    return make_mesh(verts, _orient_outward(verts, tris))


def box(size=(1.0, 1.0, 1.0), divisions=(1, 1, 1), origin=(0.0, 0.0, 0.0)) -> SurfaceMesh:
    """Axis-aligned box surface with a structured triangulation.

    ``divisions`` gives the number of cells along x, y, z.
    """
    lx, ly, lz = size
    nx, ny, nz = divisions
    o = np.asarray(origin, dtype=float)
    ex, ey, ez = np.eye(3)
    # (corner, u vector, v vector, nu, nv) with u x v pointing outward
    faces = [
        (o, ey * ly, ex * lx, ny, nx),
        (o + ez * lz, ex * lx, ey * ly, nx, ny),
        (o, ex * lx, ez * lz, nx, nz),
        (o + ey * ly, ez * lz, ex * lx, nz, nx),
        (o, ez * lz, ey * ly, nz, ny),
        (o + ex * lx, ey * ly, ez * lz, ny, nz),
    ]
    verts, tris = [], []
    off = 0
    for corner, u, v, nu, nv in faces:
        i, j = np.meshgrid(np.arange(nu + 1), np.arange(nv + 1), indexing="ij")
        pts = corner + (i / nu)[..., None] * u + (j / nv)[..., None] * v
        verts.append(pts.reshape(-1, 3))
        idx = np.arange((nu + 1) * (nv + 1)).reshape(nu + 1, nv + 1) + off
        p00, p10 = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
        p01, p11 = idx[:-1, 1:].ravel(), idx[1:, 1:].ravel()
        tris.append(np.column_stack([p00, p10, p11]))
        tris.append(np.column_stack([p00, p11, p01]))
        off += (nu + 1) * (nv + 1)
    # tolerance relative to the smallest cell keeps welding exact
    cell = min(lx / nx, ly / ny, lz / nz)
    return make_mesh(np.vstack(verts), np.vstack(tris), weld_tol=1e-9 * cell)


def bar(length, width, height, cell, origin=(0.0, 0.0, 0.0)) -> SurfaceMesh:
    """Box along x with roughly square cells of edge ``cell``."""
    div = tuple(max(1, int(round(d / cell))) for d in (length, width, height))
    return box((length, width, height), div, origin)


def prism(size=1.0, height=1.0) -> SurfaceMesh:
    """Triangular prism with 8 triangles and 12 edges."""
    base = np.array([[0.0, 0.0, 0.0], [size, 0.0, 0.0], [0.0, size, 0.0]])
    verts = np.vstack([base, base + [0.0, 0.0, height]])
    tris = [[0, 2, 1], [3, 4, 5]]
    for a, b in [(0, 1), (1, 2), (2, 0)]:
        tris += [[a, b, b + 3], [a, b + 3, a + 3]]
    return from_soup(verts, tris)


def convex_hull(points) -> SurfaceMesh:
    points = np.asarray(points, dtype=float)
    hull = ConvexHull(points)
    tris = hull.simplices.copy()
    c = points[tris]
    n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    flip = np.einsum("ij,ij->i", n, hull.equations[:, :3]) < 0
    tris[flip] = tris[flip][:, ::-1]
    return make_mesh(points, tris)


def tetrahedron(size=1.0) -> SurfaceMesh:
    return convex_hull(size * np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]]))


def icosahedron(radius=1.0) -> SurfaceMesh:
    g = (1 + 5**0.5) / 2
    p = []
    for a in (-1, 1):
        for b in (-g, g):
            p += [(0, a, b), (a, b, 0), (b, 0, a)]
    p = np.array(p, dtype=float)
    return convex_hull(radius * p / np.linalg.norm(p[0]))


def icosphere(radius=1.0, subdivisions=1, center=(0.0, 0.0, 0.0)) -> SurfaceMesh:
    """Sphere from a subdivided icosahedron, ``20 * 4**subdivisions`` triangles."""
    m = icosahedron()
    verts = list(map(tuple, m.vertices))
    tris = m.triangles
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                p = (np.asarray(verts[a]) + np.asarray(verts[b])) / 2
                verts.append(tuple(p / np.linalg.norm(p)))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in tris:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        tris = np.array(new)
    v = np.asarray(verts) * radius + np.asarray(center)
    return make_mesh(v, tris)


def ring(major_radius, minor_radius, n_phi, n_theta, gap=0.0) -> SurfaceMesh:
    """Torus in the xy-plane around the z axis.

    With ``gap > 0`` (radians) the ring is cut symmetrically about the +x axis
    and closed by two flat end caps, giving a genus-0 solid whose caps can
    serve as port contacts: the cap at angle ``gap/2`` carries tag 1 and the
    cap at ``2*pi - gap/2`` carries tag 2.
    """
    closed = gap <= 0
    if closed:
        phi = np.linspace(0, 2 * np.pi, n_phi, endpoint=False)
    else:
        phi = np.linspace(gap / 2, 2 * np.pi - gap / 2, n_phi + 1)
    theta = np.linspace(0, 2 * np.pi, n_theta, endpoint=False)
    P, T = np.meshgrid(phi, theta, indexing="ij")
    rr = major_radius + minor_radius * np.cos(T)
    verts = np.stack([rr * np.cos(P), rr * np.sin(P), minor_radius * np.sin(T)], -1).reshape(-1, 3)
    nrow = len(phi)
    idx = np.arange(nrow * n_theta).reshape(nrow, n_theta)
    tris = []
    rows = range(nrow) if closed else range(nrow - 1)
    for i in rows:
        i2 = (i + 1) % nrow
        for j in range(n_theta):
            j2 = (j + 1) % n_theta
            tris += [[idx[i, j], idx[i2, j], idx[i2, j2]], [idx[i, j], idx[i2, j2], idx[i, j2]]]
    tags = [0] * len(tris)
    verts = list(verts)
    if not closed:
        for row, tag in ((0, 1), (nrow - 1, 2)):
            f = phi[row]
            verts.append(np.array([major_radius * np.cos(f), major_radius * np.sin(f), 0.0]))
            c = len(verts) - 1
            for j in range(n_theta):
                tris.append([c, idx[row, j], idx[row, (j + 1) % n_theta]])
                tags.append(tag)
    verts = np.asarray(verts)
    tris = _orient_outward(verts, tris)
    return make_mesh(verts, tris, tags=tags)


def translate(mesh: SurfaceMesh, offset) -> SurfaceMesh:
    return make_mesh(mesh.vertices + np.asarray(offset, dtype=float), mesh.triangles,
                     tags=mesh.triangle_tag, weld_tol=0.0)


def array_of(mesh: SurfaceMesh, counts, pitch) -> SurfaceMesh:
    """Regular array of disjoint copies of ``mesh``."""
    copies = []
    for idx in np.ndindex(*counts):
        copies.append(translate(mesh, np.asarray(idx, dtype=float) * np.asarray(pitch, dtype=float)))
    return merge(*copies)

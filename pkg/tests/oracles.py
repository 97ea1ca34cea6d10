"""Independent reference computations used by the tests.

Nothing here calls into the package's numerical kernels; each function
evaluates the quantity a different way (other quadrature, brute force
enumeration, dense algebra).
"""

import itertools

import numpy as np
from scipy.special import roots_legendre

MU0 = 4e-7 * np.pi


def tanh_sinh(n, h=None):
    """Double-exponential rule on [0, 1]; tolerant of endpoint singularities."""
    h = h or 3.2 / n
    t = h * np.arange(-n, n + 1)
    s = 0.5 * np.pi * np.sinh(t)
    x = 0.5 * (1 + np.tanh(s))
    w = 0.25 * np.pi * h * np.cosh(t) / np.cosh(s) ** 2
    keep = (x > 0) & (x < 1)
    return x[keep], w[keep]


def fan_potential(r, tri, n):
    """``int_T 1/R`` and ``int_T r'/R`` by angular fans around the in-plane
    foot point of ``r``; the radial integrals are elementary."""
    x, w = tanh_sinh(n)
    nrm = np.cross(tri[1] - tri[0], tri[2] - tri[0])
    nrm /= np.linalg.norm(nrm)
    d = abs((r - tri[0]) @ nrm)
    rp = r - ((r - tri[0]) @ nrm) * nrm
    S, V = 0.0, np.zeros(3)
    for k in range(3):
        a, b = tri[k], tri[(k + 1) % 3]
        e = b - a
        s0 = np.clip(((rp - a) @ e) / (e @ e), 0, 1)
        for lo, hi in ((0, s0), (s0, 1)):
            if hi - lo < 1e-15:
                continue
            s = lo + (hi - lo) * x
            ws = (hi - lo) * w
            D = a + s[:, None] * e - rp
            jac = np.cross(D, e) @ nrm
            rho = np.linalg.norm(D, axis=1)
            # points landing on the foot point carry zero fan width
            ok = rho > 0
            D, jac, rho, ws = D[ok], jac[ok], rho[ok], ws[ok]
            Rm = np.sqrt(rho**2 + d * d)
            i0 = (Rm - d) / rho**2
            i1 = Rm / (2 * rho**2) - d * d / (2 * rho**3) * np.arcsinh(rho / d) if d > 0 else 1 / (2 * rho)
            S += (ws * jac * i0).sum()
            V += rp * (ws * jac * i0).sum() + ((ws * jac * i1)[:, None] * D).sum(0)
    return S, V


def fan_block(ta, tb, n_out=30, n_in=30):
    """``M[k, l] = int_Ta int_Tb (r - ta_k).(r' - tb_l) / |r - r'|``."""
    x, w = tanh_sinh(n_out)
    area = 0.5 * np.linalg.norm(np.cross(ta[1] - ta[0], ta[2] - ta[0]))
    M = np.zeros((3, 3))
    for u, wu in zip(x, w):
        for v, wv in zip(x, w):
            p = ta[0] + u * (ta[1] - ta[0]) + u * v * (ta[2] - ta[1])
            wt = wu * wv * u * 2 * area
            S, V = fan_potential(p, tb, n_in)
            for k in range(3):
                M[k] += wt * ((p - ta[k]) @ (V[None, :] - tb * S).T)
    return M


def lb_entry_reference(mesh, edges, i, j, n_out=24, n_in=24):
    """Single ``Lb[i, j]`` (H) from fan blocks over the four triangle pairs."""
    v = mesh.vertices
    total = 0.0
    sides_i = [(edges.tri_plus[i], edges.opposite_plus[i], 1.0), (edges.tri_minus[i], edges.opposite_minus[i], -1.0)]
    sides_j = [(edges.tri_plus[j], edges.opposite_plus[j], 1.0), (edges.tri_minus[j], edges.opposite_minus[j], -1.0)]
    for ta, fa, sa in sides_i:
        for tb, fb, sb in sides_j:
            ca, cb = v[mesh.triangles[ta]], v[mesh.triangles[tb]]
            ka = list(mesh.triangles[ta]).index(fa)
            kb = list(mesh.triangles[tb]).index(fb)
            M = fan_block(ca, cb, n_out, n_in)
            total += sa * sb * M[ka, kb] / (4 * mesh.triangle_area[ta] * mesh.triangle_area[tb])
    return MU0 / (4 * np.pi) * total


def gauss7():
    """Seven-point degree-5 rule in barycentric form (weights sum to 1)."""
    a1, b1 = 0.059715871789770, 0.470142064105115
    a2, b2 = 0.797426985353087, 0.101286507323456
    bary = [(1 / 3, 1 / 3, 1 / 3)]
    bary += [(a1, b1, b1), (b1, a1, b1), (b1, b1, a1)]
    bary += [(a2, b2, b2), (b2, a2, b2), (b2, b2, a2)]
    w = [0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3
    return np.array(bary), np.array(w)


def rwg_value(mesh, edges, i, t, r):
    """Basis ``i`` restricted to triangle ``t`` at points ``r`` (any shape (..., 3))."""
    if t == edges.tri_plus[i]:
        return (r - mesh.vertices[edges.opposite_plus[i]]) / (2 * mesh.triangle_area[t])
    if t == edges.tri_minus[i]:
        return -(r - mesh.vertices[edges.opposite_minus[i]]) / (2 * mesh.triangle_area[t])
    return np.zeros_like(r)


def gram_entry_gauss7(mesh, edges, i, j):
    bary, w = gauss7()
    total = 0.0
    for t in {int(edges.tri_plus[i]), int(edges.tri_minus[i])} & {int(edges.tri_plus[j]), int(edges.tri_minus[j])}:
        pts = bary @ mesh.vertices[mesh.triangles[t]]
        fi = rwg_value(mesh, edges, i, t, pts)
        fj = rwg_value(mesh, edges, j, t, pts)
        total += mesh.triangle_area[t] * (w * (fi * fj).sum(1)).sum()
    return total


def brute_edge_count(triangles):
    pairs = set()
    for tri in triangles:
        for a, b in itertools.combinations(tri, 2):
            pairs.add((min(a, b), max(a, b)))
    return len(pairs)


def brute_rank(M):
    """Exact rank of a small integer matrix by fraction-free elimination."""
    A = [list(map(int, row)) for row in np.asarray(M)]
    rank, rows = 0, len(A)
    cols = len(A[0]) if rows else 0
    for c in range(cols):
        piv = next((r for r in range(rank, rows) if A[r][c] != 0), None)
        if piv is None:
            continue
        A[rank], A[piv] = A[piv], A[rank]
        for r in range(rows):
            if r != rank and A[r][c] != 0:
                f, g = A[r][c], A[rank][c]
                A[r] = [g * x - f * y for x, y in zip(A[r], A[rank])]
        rank += 1
    return rank


def dense_toeplitz_apply(q, h):
    """``phi[g] = sum_{g' != g} q[g'] / (4 pi h |g - g'|)`` by direct summation."""
    idx = np.stack(np.meshgrid(*[np.arange(n) for n in q.shape], indexing="ij"), -1).reshape(-1, 3)
    d = np.linalg.norm(idx[:, None, :] - idx[None, :, :], axis=-1)
    with np.errstate(divide="ignore"):
        K = np.where(d > 0, 1.0 / (4 * np.pi * h * d), 0.0)
    return (K @ q.ravel()).reshape(q.shape)


def gauss_line(n):
    x, w = roots_legendre(n)
    return (x + 1) / 2, w / 2


def ring_inductance(R, a):
    """External inductance of a thin circular loop."""
    return MU0 * R * (np.log(8 * R / a) - 2)


def bar_resistance(length, width, height, sigma, f, mu=MU0):
    """Skin-effect resistance ``l / (sigma delta P)``."""
    delta = np.sqrt(2 / (2 * np.pi * f * mu * sigma))
    return length / (sigma * delta * 2 * (width + height))

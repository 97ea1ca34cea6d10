"""Compiled inner loops for the 1/R Galerkin blocks of triangle pairs.

For a pair (Ta, Tb) the kernels return the four local moments

    I0  = int_Ta int_Tb 1/R
    Ix  = int int (r - ca) / R
    Iy  = int int (r' - cb) / R
    Ixy = int int (r - ca).(r' - cb) / R

with ``ca``, ``cb`` the centroids, from which every RWG block follows.
Moments are taken about the centroids so nothing cancels at large absolute
coordinates.
"""

import numpy as np
from numba import njit, prange

# pair kinds
SELF, TOUCHING, NEAR, FAR = 0, 1, 2, 3


@njit(cache=True)
def potential_integrals(r, tri, out_v):
    """Return ``int_T 1/|r - r'| dS'`` and store ``int_T (r' - r)/|r - r'| dS'``
    in ``out_v``, both in closed form for the flat triangle ``tri``."""
    e1x = tri[1, 0] - tri[0, 0]
    e1y = tri[1, 1] - tri[0, 1]
    e1z = tri[1, 2] - tri[0, 2]
    e2x = tri[2, 0] - tri[0, 0]
    e2y = tri[2, 1] - tri[0, 1]
    e2z = tri[2, 2] - tri[0, 2]
    nx = e1y * e2z - e1z * e2y
    ny = e1z * e2x - e1x * e2z
    nz = e1x * e2y - e1y * e2x
    nn = np.sqrt(nx * nx + ny * ny + nz * nz)
    nx /= nn
    ny /= nn
    nz /= nn
    d = (r[0] - tri[0, 0]) * nx + (r[1] - tri[0, 1]) * ny + (r[2] - tri[0, 2]) * nz
    ad = abs(d)
    px = r[0] - d * nx
    py = r[1] - d * ny
    pz = r[2] - d * nz
    s = 0.0
    vx = 0.0
    vy = 0.0
    vz = 0.0
    for i in range(3):
        j = (i + 1) % 3
        lx = tri[j, 0] - tri[i, 0]
        ly = tri[j, 1] - tri[i, 1]
        lz = tri[j, 2] - tri[i, 2]
        ll = np.sqrt(lx * lx + ly * ly + lz * lz)
        lx /= ll
        ly /= ll
        lz /= ll
        # outward in-plane normal of edge i
        ux = ly * nz - lz * ny
        uy = lz * nx - lx * nz
        uz = lx * ny - ly * nx
        ax = tri[i, 0] - px
        ay = tri[i, 1] - py
        az = tri[i, 2] - pz
        lm = ax * lx + ay * ly + az * lz
        lp = lm + ll
        p0 = ax * ux + ay * uy + az * uz
        r0sq = p0 * p0 + d * d
        rp = np.sqrt(r0sq + lp * lp)
        rm = np.sqrt(r0sq + lm * lm)
        if lp < 0.0:
            f = np.log((rm - lm) / (rp - lp))
        elif lm >= 0.0:
            f = np.log((rp + lp) / (rm + lm))
        elif r0sq > 0.0:
            f = np.log((rp + lp) * (rm - lm) / r0sq)
        else:
            f = 0.0
        s += p0 * f
        if ad > 1e-14 * ll and r0sq > 0.0:
            s -= ad * (np.arctan(p0 * lp / (r0sq + ad * rp)) - np.arctan(p0 * lm / (r0sq + ad * rm)))
        g = 0.5 * (r0sq * f + lp * rp - lm * rm)
        vx += g * ux
        vy += g * uy
        vz += g * uz
    out_v[0] = vx - d * nx * s
    out_v[1] = vy - d * ny * s
    out_v[2] = vz - d * nz * s
    return s


@njit(cache=True)
def _analytic_moments(ta, tb, ca, cb, area_a, uv, w, out):
    """Outer quadrature on ``ta``, closed-form inner integral over ``tb``."""
    r = np.empty(3)
    v = np.empty(3)
    i0 = 0.0
    ix0 = ix1 = ix2 = 0.0
    iy0 = iy1 = iy2 = 0.0
    ixy = 0.0
    for q in range(len(w)):
        for c in range(3):
            r[c] = ta[0, c] + uv[q, 0] * (ta[1, c] - ta[0, c]) + uv[q, 1] * (ta[2, c] - ta[0, c])
        s = potential_integrals(r, tb, v)
        wq = w[q] * area_a
        x0 = r[0] - ca[0]
        x1 = r[1] - ca[1]
        x2 = r[2] - ca[2]
        y0 = v[0] + (r[0] - cb[0]) * s
        y1 = v[1] + (r[1] - cb[1]) * s
        y2 = v[2] + (r[2] - cb[2]) * s
        i0 += wq * s
        ix0 += wq * x0 * s
        ix1 += wq * x1 * s
        ix2 += wq * x2 * s
        iy0 += wq * y0
        iy1 += wq * y1
        iy2 += wq * y2
        ixy += wq * (x0 * y0 + x1 * y1 + x2 * y2)
    out[0] = i0
    out[1] = ix0
    out[2] = ix1
    out[3] = ix2
    out[4] = iy0
    out[5] = iy1
    out[6] = iy2
    out[7] = ixy


@njit(cache=True)
def _product_moments(ta, tb, ca, cb, area_a, area_b, uv, w, out):
    """Tensor-product quadrature on both triangles (smooth kernel)."""
    nq = len(w)
    xa = np.empty((nq, 3))
    yb = np.empty((nq, 3))
    for q in range(nq):
        for c in range(3):
            xa[q, c] = ta[0, c] + uv[q, 0] * (ta[1, c] - ta[0, c]) + uv[q, 1] * (ta[2, c] - ta[0, c]) - ca[c]
            yb[q, c] = tb[0, c] + uv[q, 0] * (tb[1, c] - tb[0, c]) + uv[q, 1] * (tb[2, c] - tb[0, c]) - cb[c]
    d0 = ca[0] - cb[0]
    d1 = ca[1] - cb[1]
    d2 = ca[2] - cb[2]
    i0 = 0.0
    ix0 = ix1 = ix2 = 0.0
    iy0 = iy1 = iy2 = 0.0
    ixy = 0.0
    for p in range(nq):
        # inner sums over the source rule
        s0 = 0.0
        sy0 = sy1 = sy2 = 0.0
        for q in range(nq):
            r0 = d0 + xa[p, 0] - yb[q, 0]
            r1 = d1 + xa[p, 1] - yb[q, 1]
            r2 = d2 + xa[p, 2] - yb[q, 2]
            k = w[q] / np.sqrt(r0 * r0 + r1 * r1 + r2 * r2)
            s0 += k
            sy0 += k * yb[q, 0]
            sy1 += k * yb[q, 1]
            sy2 += k * yb[q, 2]
        wp = w[p]
        i0 += wp * s0
        ix0 += wp * xa[p, 0] * s0
        ix1 += wp * xa[p, 1] * s0
        ix2 += wp * xa[p, 2] * s0
        iy0 += wp * sy0
        iy1 += wp * sy1
        iy2 += wp * sy2
        ixy += wp * (xa[p, 0] * sy0 + xa[p, 1] * sy1 + xa[p, 2] * sy2)
    sc = area_a * area_b
    out[0] = i0 * sc
    out[1] = ix0 * sc
    out[2] = ix1 * sc
    out[3] = ix2 * sc
    out[4] = iy0 * sc
    out[5] = iy1 * sc
    out[6] = iy2 * sc
    out[7] = ixy * sc


@njit(cache=True)
def _shares_vertex(tris, a, b):
    for i in range(3):
        for j in range(3):
            if tris[a, i] == tris[b, j]:
                return True
    return False


@njit(cache=True)
def _pair_block(a, b, verts, tris, cent, area, radius, tier_d, tier_uv, tier_w, tier_n,
                sing_uv, sing_w, near_uv, near_w, m, out):
    """3x3 block ``M[k, l] = int_Ta int_Tb (r - p_k).(r' - p_l) / R`` where
    ``p_k`` is corner ``k`` of ``Ta`` and ``p_l`` corner ``l`` of ``Tb``."""
    ta = verts[tris[a]]
    tb = verts[tris[b]]
    ca = cent[a]
    cb = cent[b]
    if a == b or _shares_vertex(tris, a, b):
        _analytic_moments(ta, tb, ca, cb, area[a], sing_uv, sing_w, m)
    else:
        dx = ca[0] - cb[0]
        dy = ca[1] - cb[1]
        dz = ca[2] - cb[2]
        dist = np.sqrt(dx * dx + dy * dy + dz * dz) / max(radius[a], radius[b])
        if dist < tier_d[0]:
            _analytic_moments(ta, tb, ca, cb, area[a], near_uv, near_w, m)
        else:
            t = 0
            while t + 1 < len(tier_d) and dist >= tier_d[t + 1]:
                t += 1
            n = tier_n[t]
            _product_moments(ta, tb, ca, cb, area[a], area[b], tier_uv[t, :n], tier_w[t, :n], m)
    for k in range(3):
        qk0 = ta[k, 0] - ca[0]
        qk1 = ta[k, 1] - ca[1]
        qk2 = ta[k, 2] - ca[2]
        for l in range(3):
            ql0 = tb[l, 0] - cb[0]
            ql1 = tb[l, 1] - cb[1]
            ql2 = tb[l, 2] - cb[2]
            out[k, l] = (
                m[7]
                - (m[1] * ql0 + m[2] * ql1 + m[3] * ql2)
                - (qk0 * m[4] + qk1 * m[5] + qk2 * m[6])
                + (qk0 * ql0 + qk1 * ql1 + qk2 * ql2) * m[0]
            )
    if a == b:
        for k in range(3):
            for l in range(k + 1, 3):
                avg = 0.5 * (out[k, l] + out[l, k])
                out[k, l] = avg
                out[l, k] = avg


@njit(cache=True, parallel=True)
def pair_blocks(pa, pb, verts, tris, cent, area, radius, tier_d, tier_uv, tier_w, tier_n,
                sing_uv, sing_w, near_uv, near_w):
    """Blocks for a list of triangle pairs, shape (npairs, 3, 3)."""
    n = len(pa)
    out = np.empty((n, 3, 3))
    for i in prange(n):
        m = np.empty(8)
        _pair_block(pa[i], pb[i], verts, tris, cent, area, radius, tier_d, tier_uv, tier_w,
                    tier_n, sing_uv, sing_w, near_uv, near_w, m, out[i])
    return out


@njit(cache=True)
def scatter_dense(L, pa, pb, blocks, tri_edges, tri_coef):
    """Accumulate pair blocks into the dense edge matrix (both triangles of
    a pair contribute; the mirrored entry is added for ``a != b``)."""
    for i in range(len(pa)):
        a = pa[i]
        b = pb[i]
        for k in range(3):
            ek = tri_edges[a, k]
            ck = tri_coef[a, k]
            for l in range(3):
                el = tri_edges[b, l]
                v = ck * tri_coef[b, l] * blocks[i, k, l]
                L[ek, el] += v
                if a != b:
                    L[el, ek] += v

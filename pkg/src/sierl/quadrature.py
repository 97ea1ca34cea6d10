"""Quadrature rules on the reference triangle {(u, v): u, v >= 0, u + v <= 1}.

Every rule is returned as ``(uv, w)`` with ``w.sum() == 1``, so a physical
integral is ``area * sum(w * f(p0 + u (p1 - p0) + v (p2 - p0)))``.
"""

from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre


@lru_cache(maxsize=None)
def radon7():
    """Seven-point symmetric rule, exact for degree 5."""
    s = np.sqrt(15.0)
    a1, a2 = (6 - s) / 21, (6 + s) / 21
    w1, w2 = (155 - s) / 1200, (155 + s) / 1200
    uv = np.array(
        [
            [1 / 3, 1 / 3],
            [a1, a1], [1 - 2 * a1, a1], [a1, 1 - 2 * a1],
            [a2, a2], [1 - 2 * a2, a2], [a2, 1 - 2 * a2],
        ]
    )
    w = np.array([9 / 40, w1, w1, w1, w2, w2, w2])
    return uv, w


@lru_cache(maxsize=None)
def stroud(n: int):
    """Collapsed Gauss-Jacobi x Gauss-Legendre product rule with ``n**2``
    points, exact for degree ``2n - 1``."""
    x, wx = roots_jacobi(n, 1, 0)
    y, wy = roots_legendre(n)
    u = (x + 1) / 2
    eta = (y + 1) / 2
    U, E = np.meshgrid(u, eta, indexing="ij")
    uv = np.column_stack([U.ravel(), ((1 - U) * E).ravel()])
    w = np.outer(wx, wy).ravel()
    return uv, w / w.sum()


@lru_cache(maxsize=None)
def graded(n: int = 8, power: float = 2.0):
    """Rule for integrands that are singular along the triangle's own edges
    and corners (``d log d`` type).

    The triangle is split into three sub-triangles around its centroid; in
    each, Gauss-Legendre points are clustered toward the base edge by
    ``t = 1 - (1 - tau)**power`` and toward both base corners by a cubic
    smoothstep. ``3 n**2`` points.
    """
    x, wx = roots_legendre(n)
    tau = (x + 1) / 2
    wt = wx / 2
    t = 1 - (1 - tau) ** power
    dt = power * (1 - tau) ** (power - 1)
    s = tau * tau * (3 - 2 * tau)
    ds = 6 * tau * (1 - tau)
    corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    c = corners.mean(axis=0)
    pts, wts = [], []
    T, S = np.meshgrid(t, s, indexing="ij")
    W = np.outer(wt * dt, wt * ds) * T
    for i in range(3):
        a, b = corners[i], corners[(i + 1) % 3]
        p = c + T[..., None] * (a - c) + (T * S)[..., None] * (b - a)
        sub = 0.5 * abs((a - c)[0] * (b - c)[1] - (a - c)[1] * (b - c)[0])
        pts.append(p.reshape(-1, 2))
        wts.append((W * 2 * sub).ravel())
    w = np.concatenate(wts)
    return np.vstack(pts), w / w.sum()


def map_points(corners, uv):
    """Physical points of a rule on the triangle with (3, 3) ``corners``."""
    corners = np.asarray(corners, dtype=float)
    return corners[0] + uv[:, :1] * (corners[1] - corners[0]) + uv[:, 1:] * (corners[2] - corners[0])

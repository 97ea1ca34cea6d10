"""Loop-current system ``A Zb A^T I_l = V_l`` and its iterative solution.

Only mesh-edge branches carry impedance, so every product goes through the
mesh-edge columns of the loop matrix. The left preconditioner keeps the
diagonal of ``Zb`` only, which leaves a sparse matrix with the sparsity of
``A A^T`` that a sparse LU handles directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import BranchOperator
from .circuit import LoopBasis
from .errors import DimensionMismatch, NoConvergence, SingularPreconditioner


@dataclass(eq=False)
class LoopSystem:
    basis: LoopBasis
    op: BranchOperator
    omega: float
    _A: sp.csr_matrix = field(init=False, repr=False)
    _At: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        self._A = self.basis.A_mesh
        self._At = self._A.T.tocsr()

    @property
    def n(self) -> int:
        return self.basis.loop_count

    def apply(self, x) -> np.ndarray:
        return self._A @ self.op.apply(self._At @ x, self.omega)

    def matrix(self) -> np.ndarray:
        """Dense ``Z_l`` (dense backend only)."""
        A = self._A.toarray()
        return A @ self.op.matrix(self.omega) @ A.T


@dataclass(eq=False)
class LoopPreconditioner:
    P: sp.csc_matrix
    lu: spla.SuperLU

    def solve(self, b) -> np.ndarray:
        return self.lu.solve(np.asarray(b, dtype=complex))


def build_preconditioner(basis: LoopBasis, op: BranchOperator, omega: float) -> LoopPreconditioner:
    """``P = A diag(Zb) A^T`` factored by sparse LU.

    Raises
    ------
    SingularPreconditioner
        A loop has no impedance (it runs through contact and source branches
        only) or the factorization hits a zero pivot.
    """
    A = basis.A_mesh
    z = op.diagonal(omega)
    P = (A @ sp.diags(z) @ A.T).tocsc()
    P.eliminate_zeros()
    empty = np.flatnonzero(np.diff(P.indptr) == 0)
    if len(empty):
        raise SingularPreconditioner(
            f"{len(empty)} loop(s) carry no impedance (first: loop {empty[0]}); "
            "check that no port's source and sink contacts touch the same path"
        )
    try:
        lu = spla.splu(P)
    except RuntimeError as exc:
        raise SingularPreconditioner(f"sparse LU of the preconditioner failed: {exc}") from exc
    return LoopPreconditioner(P, lu)


@dataclass
class GmresResult:
    x: np.ndarray
    iterations: int
    residuals: list


def gmres(matvec, b, *, psolve=None, tol=1e-3, restart=100, maxiter=None, x0=None) -> GmresResult:
    """Restarted GMRES with optional left preconditioning.

    Convergence is declared when ``||M^-1 (b - A x)|| <= tol * ||M^-1 b||``.
    ``residuals`` holds that relative norm after every inner iteration
    (starting with the initial value). ``maxiter`` caps the total number of
    inner iterations.

    Raises
    ------
    NoConvergence
        ``maxiter`` reached; carries the iterate with the smallest residual.
    """
    if not 0 < tol < 1:
        raise ValueError(f"tol must lie in (0, 1), got {tol}")
    b = np.asarray(b, dtype=complex)
    n = b.shape[0]
    M = psolve if psolve is not None else (lambda v: v)
    maxiter = maxiter if maxiter is not None else max(10 * n, 1000)
    x = np.zeros(n, dtype=complex) if x0 is None else np.array(x0, dtype=complex)
    if not np.any(b):
        return GmresResult(np.zeros(n, dtype=complex), 0, [0.0])
    bnorm = np.linalg.norm(M(b))
    r = M(b - matvec(x)) if np.any(x) else M(b)
    beta = np.linalg.norm(r)
    history = [beta / bnorm]
    best_x, best_res = x.copy(), history[0]
    if history[0] <= tol:
        return GmresResult(x, 0, history)
    it = 0
    m = min(restart, n)
    while it < maxiter:
        V = np.zeros((m + 1, n), dtype=complex)
        H = np.zeros((m + 1, m), dtype=complex)
        cs = np.zeros(m, dtype=complex)
        sn = np.zeros(m, dtype=complex)
        g = np.zeros(m + 1, dtype=complex)
        g[0] = beta
        V[0] = r / beta
        k_done = 0
        for k in range(m):
            # copy: user callbacks may hand back their input
            w = np.array(M(matvec(V[k])), dtype=complex)
            for i in range(k + 1):
                H[i, k] = np.vdot(V[i], w)
                w -= H[i, k] * V[i]
            H[k + 1, k] = np.linalg.norm(w)
            breakdown = abs(H[k + 1, k]) <= 1e-14 * np.abs(H[: k + 1, k]).max(initial=1e-300)
            if not breakdown:
                V[k + 1] = w / H[k + 1, k]
            for i in range(k):
                t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -np.conj(sn[i]) * H[i, k] + np.conj(cs[i]) * H[i + 1, k]
                H[i, k] = t
            a, c = H[k, k], H[k + 1, k]
            den = np.sqrt(abs(a) ** 2 + abs(c) ** 2)
            cs[k] = np.conj(a) / den if den else 1.0
            sn[k] = np.conj(c) / den if den else 0.0
            H[k, k] = cs[k] * a + sn[k] * c
            H[k + 1, k] = 0.0
            g[k + 1] = -np.conj(sn[k]) * g[k]
            g[k] = cs[k] * g[k]
            it += 1
            k_done = k + 1
            history.append(abs(g[k + 1]) / bnorm)
            if history[-1] <= tol or breakdown or it >= maxiter:
                break
        y = np.linalg.solve(np.triu(H[:k_done, :k_done]), g[:k_done])
        x = x + V[:k_done].T @ y
        r = M(b - matvec(x))
        beta = np.linalg.norm(r)
        res = beta / bnorm
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= tol:
            return GmresResult(x, it, history)
        if beta == 0:
            break
    raise NoConvergence(
        f"GMRES stopped after {it} iterations at relative residual {best_res:.3e} (tol {tol:g})",
        x=best_x, iterations=it, residuals=history,
    )


def gmres_solve(system: LoopSystem, precond: LoopPreconditioner | None, V_l, *, tol=1e-3, restart=100,
                maxiter=None) -> GmresResult:
    V_l = np.asarray(V_l)
    if V_l.shape != (system.n,):
        raise DimensionMismatch(f"right-hand side has shape {V_l.shape}, expected ({system.n},)")
    psolve = precond.solve if precond is not None else None
    return gmres(system.apply, V_l, psolve=psolve, tol=tol, restart=restart, maxiter=maxiter)


def direct_solve(system: LoopSystem, V_l) -> np.ndarray:
    """Dense LU solve of the loop system (reference path, dense backend)."""
    return np.linalg.solve(system.matrix(), np.asarray(V_l, dtype=complex))

"""Direct solvers for the Sylvester equations used by the preconditioners,
and the dense Kronecker oracle.

Symmetric pencils are diagonalized with ``scipy.linalg.eigh`` (Cholesky
reduction of the generalized problem); the nonsymmetric temporal factor of
the shifted equation is handled by a complex Schur form.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import KronOperator, LowRankMatrix

log = logging.getLogger(__name__)

DENSE_SPACE_CAP = 4096
DENSE_KRON_CAP = 20000
_DENSE_LU_CAP = 4000


class IllPosedError(ArithmeticError):
    """A Sylvester equation has a (numerically) singular coefficient."""


class ResidualError(ArithmeticError):
    """A direct solve failed its residual check."""


def _dense(A) -> np.ndarray:
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


@dataclass(frozen=True)
class SpdPencil:
    """``A X = B X diag(lam)`` with ``X.T B X = I`` and ``lam`` ascending."""

    A: np.ndarray
    B: np.ndarray
    lam: np.ndarray
    X: np.ndarray

    def residual(self) -> float:
        r = self.A @ self.X - self.B @ self.X * self.lam[None, :]
        return float(np.linalg.norm(r) / max(np.linalg.norm(self.A), 1e-300))

    @property
    def Xinv(self) -> np.ndarray:
        """Inverse of X, equal to X.T B."""
        return self.X.T @ self.B


def decompose_pencil(A, B) -> SpdPencil:
    """Generalized symmetric-definite eigendecomposition of (A, B)."""
    Ad, Bd = _dense(A), _dense(B)
    if Ad.shape != Bd.shape or Ad.shape[0] != Ad.shape[1]:
        raise ValueError("pencil matrices must be square and of equal size")
    try:
        lam, X = sla.eigh(Ad, Bd)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"second pencil matrix is not SPD: {exc}") from exc
    return SpdPencil(Ad, Bd, lam, X)


# ---------------------------------------------------------------------------
# M_h Z Q_t^T + Q_h Z M_t = R


class SymSylvesterSolver:
    """Reusable solver for ``M_h Z Q_t^T + Q_h Z M_t = R`` (all four SPD)."""

    def __init__(self, M_h, Q_h, M_t, Q_t, space_cap: int = DENSE_SPACE_CAP):
        n = M_h.shape[0]
        if n > space_cap:
            raise ValueError(f"spatial size {n} above dense cap {space_cap}")
        self.space = decompose_pencil(Q_h, M_h)
        self.time = decompose_pencil(Q_t, M_t)
        denom = self.space.lam[:, None] + self.time.lam[None, :]
        if np.any(denom <= 0):
            raise IllPosedError("pencil eigenvalue sums must be positive")
        self._denom = denom
        self._mats = (M_h, Q_h, np.asarray(M_t), np.asarray(Q_t))

    def __call__(self, R) -> np.ndarray:
        Xh, Xt = self.space.X, self.time.X
        if isinstance(R, LowRankMatrix):
            Y = (Xh.T @ R.left) @ (Xt.T @ R.right).T
        else:
            Y = Xh.T @ np.asarray(R) @ Xt
        return Xh @ (Y / self._denom) @ Xt.T

    def residual(self, Z, R) -> float:
        M_h, Q_h, M_t, Q_t = self._mats
        R = R.full() if isinstance(R, LowRankMatrix) else np.asarray(R)
        res = R - M_h @ Z @ Q_t.T - Q_h @ Z @ M_t
        return float(np.linalg.norm(res) / max(np.linalg.norm(R), 1e-300))


def solve_sym_sylvester(M_h, Q_h, M_t, Q_t, R, tol: float = 1e-10) -> np.ndarray:
    """Solve ``M_h Z Q_t^T + Q_h Z M_t = R`` by diagonalizing both SPD pencils."""
    solver = SymSylvesterSolver(M_h, Q_h, M_t, Q_t)
    Z = solver(R)
    res = solver.residual(Z, R)
    if res > tol:
        raise ResidualError(f"Sylvester residual {res:.2e} above {tol:.0e}")
    return Z


# ---------------------------------------------------------------------------
# W M_t^{-1} N_t + M_h^{-1} N_h W = R


class ShiftedSylvesterSolver:
    """Reusable solver for ``W M_t^{-1} N_t + M_h^{-1} N_h W = R``.

    Space side: pencil (N_h, M_h), so ``M_h^{-1} N_h = X diag(lam) X^T M_h``.
    Time side: complex Schur form ``M_t^{-1} N_t = Z S Z^H`` followed by a
    column sweep over the triangular factor. ``time_operator`` replaces
    ``M_t^{-1} N_t`` by an arbitrary square matrix.
    """

    def __init__(self, N_h, M_h, N_t=None, M_t=None, space_cap: int = DENSE_SPACE_CAP,
                 time_operator=None):
        n = M_h.shape[0]
        if n > space_cap:
            raise ValueError(f"spatial size {n} above dense cap {space_cap}")
        Nh = _dense(N_h)
        self.space = decompose_pencil(0.5 * (Nh + Nh.T), M_h)
        if time_operator is None:
            # right factor M_t^{-1} N_t
            self.Tt = sla.solve(_dense(M_t), _dense(N_t), assume_a="pos")
        else:
            self.Tt = np.asarray(time_operator, dtype=float)
        self.S, self.Z = sla.schur(self.Tt.astype(complex), output="complex")
        diag = np.diag(self.S)
        denom = self.space.lam[:, None] + diag[None, :]
        scale = max(np.abs(self.space.lam).max(), np.abs(diag).max(), 1e-300)
        if np.any(np.abs(denom) <= 1e-14 * scale):
            raise IllPosedError("shifted Sylvester equation is singular")
        self._denom = denom
        self._Mh = M_h

    def __call__(self, R) -> np.ndarray:
        R = R.full() if isinstance(R, LowRankMatrix) else np.asarray(R, dtype=float)
        X = self.space.X
        F = (X.T @ (self._Mh @ R)) @ self.Z
        S = self.S
        Y = np.empty_like(F)
        for j in range(F.shape[1]):
            rhs = F[:, j] - Y[:, :j] @ S[:j, j]
            Y[:, j] = rhs / self._denom[:, j]
        W = X @ (Y @ self.Z.conj().T)
        imag = np.abs(W.imag).max() if W.size else 0.0
        if imag > 1e-8 * max(np.abs(W.real).max(), 1e-300):
            log.warning("shifted Sylvester solve left imaginary residue %.2e", imag)
        return np.ascontiguousarray(W.real)

    def residual(self, W, R) -> float:
        R = R.full() if isinstance(R, LowRankMatrix) else np.asarray(R)
        lhs = W @ self.Tt + self.space.X @ (self.space.lam[:, None] * (self.space.Xinv @ W))
        return float(np.linalg.norm(R - lhs) / max(np.linalg.norm(R), 1e-300))


def solve_shifted_sylvester(N_h, M_h, N_t, M_t, R, tol: float = 1e-9) -> np.ndarray:
    """Solve ``W M_t^{-1} N_t + M_h^{-1} N_h W = R``."""
    solver = ShiftedSylvesterSolver(N_h, M_h, N_t, M_t)
    W = solver(R)
    res = solver.residual(W, R)
    if res > tol:
        raise ResidualError(f"shifted Sylvester residual {res:.2e} above {tol:.0e}")
    return W


# ---------------------------------------------------------------------------
# dense oracle


def dense_kron_solve(op: KronOperator, G, tol: float = 1e-10) -> np.ndarray:
    """Solve ``op(U) = G`` by materializing the Kronecker sum.

    Dense LU up to a few thousand unknowns, sparse LU above (the dense matrix
    at the upper cap would need several GiB).
    """
    n_s, n_t = op.shape
    n = n_s * n_t
    if n > DENSE_KRON_CAP:
        raise ValueError(f"system size {n} above dense oracle cap {DENSE_KRON_CAP}")
    g = G.full() if isinstance(G, LowRankMatrix) else np.asarray(G, dtype=float)
    b = g.ravel(order="F")
    if n <= _DENSE_LU_CAP:
        A = op.dense()
        x = sla.solve(A, b)
        r = b - A @ x
    else:
        A = op.sparse().tocsc()
        x = spla.splu(A).solve(b)
        r = b - A @ x
    nb = np.linalg.norm(b)
    if nb > 0 and np.linalg.norm(r) / nb > tol:
        raise ResidualError(f"dense oracle residual {np.linalg.norm(r) / nb:.2e}")
    return x.reshape((n_s, n_t), order="F")


__all__ = [
    "DENSE_KRON_CAP",
    "DENSE_SPACE_CAP",
    "IllPosedError",
    "ResidualError",
    "ShiftedSylvesterSolver",
    "SpdPencil",
    "SymSylvesterSolver",
    "decompose_pencil",
    "dense_kron_solve",
    "solve_shifted_sylvester",
    "solve_sym_sylvester",
]

"""Galerkin projection onto rational Krylov spaces for the three-term form

    M_h U Q_t + N_h U S_t + Q_h U M_t = G1 G2^T,   S_t = N_t + N_t^T,

which equals the optimal four-term operator because N_h is symmetric. The
iterate is kept as U_k = V_k Y_k W_k^T with orthonormal V_k, W_k.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import KronOperator, LowRankMatrix
from .pcg import SolveReport, backward_error

log = logging.getLogger(__name__)

SHIFT_GRID = 200
DROP_TOL = 1e-10
REDUCED_DENSE_CAP = 3000


class SingularShiftError(ArithmeticError):
    """Shifted matrix stayed singular after one perturbation of the shift."""


# ---------------------------------------------------------------------------
# shifted solves


class _SideSolver:
    """Solves with ``Q + s M`` and ``N + sqrt(s) M`` on one side."""

    def __init__(self, M, N, Q, sparse: bool):
        self.M, self.N, self.Q = M, N, Q
        self.sparse = sparse

    def _solve(self, A, b):
        if self.sparse:
            n = A.shape[0]
            if n <= 50000:
                lu = spla.splu(sp.csc_matrix(A))
                x = lu.solve(b)
                if not np.all(np.isfinite(x)):
                    raise np.linalg.LinAlgError("singular")
                return x
            x, info = spla.cg(A, b, rtol=1e-8, maxiter=10 * n)
            if info != 0:
                raise np.linalg.LinAlgError("inner CG failed")
            return x
        lu, piv = sla.lu_factor(A, check_finite=True)
        if np.min(np.abs(np.diag(lu))) <= 1e-14 * np.abs(A).max():
            raise np.linalg.LinAlgError("singular")
        return sla.lu_solve((lu, piv), b)

    def shifted(self, which: str, s: float, b):
        """(Q + s M)^{-1} b or (N + sqrt(s) M)^{-1} b with one +10% retry."""
        for attempt in range(2):
            shift = s if which == "Q" else np.sqrt(s)
            A = (self.Q if which == "Q" else self.N) + shift * self.M
            try:
                with np.errstate(all="raise"):
                    return self._solve(A, b)
            except (np.linalg.LinAlgError, RuntimeError, FloatingPointError):
                if attempt == 0:
                    s *= 1.1
                    continue
                raise SingularShiftError(f"{which}-shifted matrix singular near s={s:.3e}")
        raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# basis


@dataclass(frozen=True)
class RationalKrylovBasis:
    """Orthonormal basis with the shifts and column counts of each extension."""

    V: np.ndarray
    seed: np.ndarray
    shifts: tuple = ()
    added: tuple = ()

    @classmethod
    def from_seed(cls, seed) -> RationalKrylovBasis:
        seed = np.asarray(seed, dtype=float).reshape(np.shape(seed)[0], -1)
        V = _orthonormal_columns(seed)
        return cls(V, seed)

    @property
    def dim(self) -> int:
        return self.V.shape[1]

    @property
    def steps(self) -> int:
        return len(self.shifts)


def _orthonormal_columns(C):
    V = np.zeros((C.shape[0], 0))
    return orth_extend(V, C)


def orth_extend(V, C, drop_tol: float = DROP_TOL):
    """Append the columns of C after two Gram-Schmidt passes; nearly
    dependent candidates (norm ratio below ``drop_tol``) are dropped."""
    Vc = V
    for c in np.asarray(C, dtype=float).reshape(C.shape[0], -1).T:
        nrm0 = np.linalg.norm(c)
        if nrm0 == 0:
            continue
        for _ in range(2):
            c = c - Vc @ (Vc.T @ c)
        nrm = np.linalg.norm(c)
        if nrm > drop_tol * nrm0:
            Vc = np.column_stack([Vc, c / nrm])
    return Vc


def extend_space(basis: RationalKrylovBasis, solver: _SideSolver, shift: float,
                 k: int | None = None) -> RationalKrylovBasis:
    """Add ``(Q + s M)^{-1} v_k`` and ``(N + sqrt(s) M)^{-1} v_k`` with v_k the
    k-th basis column (0-based; defaults to the number of previous steps)."""
    if shift <= 0:
        raise ValueError("shift must be positive")
    k = basis.steps if k is None else k
    if k >= basis.dim:
        return basis
    v = basis.V[:, k]
    c1 = solver.shifted("Q", shift, v)
    c2 = solver.shifted("N", shift, v)
    V = orth_extend(basis.V, np.column_stack([c1, c2]))
    return RationalKrylovBasis(V, basis.seed, basis.shifts + (shift,),
                               basis.added + (V.shape[1] - basis.dim,))


def adaptive_shift(bounds, ritz=None, n_grid: int = SHIFT_GRID) -> float:
    """Grid point of [lmin, lmax] maximizing prod |s - theta| / prod |s + theta|.

    Falls back to the geometric mean of the bounds when no Ritz values are given.
    """
    lmin, lmax = float(bounds[0]), float(bounds[1])
    if not 0 < lmin <= lmax:
        raise ValueError("spectral bounds must satisfy 0 < lmin <= lmax")
    theta = np.asarray([] if ritz is None else ritz, dtype=float).ravel()
    theta = theta[np.isfinite(theta)]
    if theta.size == 0:
        return float(np.sqrt(lmin * lmax))
    grid = np.geomspace(lmin, lmax, n_grid)
    # log form avoids under/overflow of long products
    crit = np.sum(np.log(np.abs(grid[:, None] - theta[None, :]) + 1e-300), axis=1) - np.sum(
        np.log(np.abs(grid[:, None] + theta[None, :])), axis=1
    )
    return float(grid[int(np.argmax(crit))])


def spectral_bounds(Q, M, iters: int = 30) -> tuple[float, float]:
    """Extreme eigenvalues of the SPD pencil (Q, M); dense below 400 unknowns,
    otherwise a few forward/inverse power steps with a safety margin."""
    n = Q.shape[0]
    if n <= 400:
        Qd = Q.toarray() if sp.issparse(Q) else np.asarray(Q)
        Md = M.toarray() if sp.issparse(M) else np.asarray(M)
        lam = sla.eigh(Qd, Md, eigvals_only=True)
        return float(lam[0]), float(lam[-1])
    Mlu = spla.splu(sp.csc_matrix(M))
    Qlu = spla.splu(sp.csc_matrix(Q))
    rng = np.random.default_rng(0)
    x = rng.standard_normal(n)
    for _ in range(iters):
        x = Mlu.solve(Q @ x)
        x /= np.linalg.norm(x)
    lmax = float(x @ (Q @ x) / (x @ (M @ x)))
    y = rng.standard_normal(n)
    for _ in range(iters):
        y = Qlu.solve(M @ y)
        y /= np.linalg.norm(y)
    lmin = float(y @ (Q @ y) / (y @ (M @ y)))
    return 0.9 * lmin, 1.1 * lmax


# ---------------------------------------------------------------------------
# reduced problem


@dataclass(frozen=True)
class ReducedProblem:
    """Projected three-term equation Mv Y Qw + Nv Y Sw + Qv Y Mw = G1r G2r^T."""

    Mv: np.ndarray
    Nv: np.ndarray
    Qv: np.ndarray
    Mw: np.ndarray
    Sw: np.ndarray
    Qw: np.ndarray
    G1: np.ndarray
    G2: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.Mv.shape[0], self.Mw.shape[0]

    def apply(self, Y):
        return self.Mv @ Y @ self.Qw + self.Nv @ Y @ self.Sw + self.Qv @ Y @ self.Mw

    def rhs(self):
        return self.G1 @ self.G2.T


def project(V, W, M_h, N_h, Q_h, M_t, S_t, Q_t, G1, G2) -> ReducedProblem:
    def pr(A, B):
        return B.T @ (A @ B)

    return ReducedProblem(pr(M_h, V), pr(N_h, V), pr(Q_h, V), pr(M_t, W), pr(S_t, W),
                          pr(Q_t, W), V.T @ G1, W.T @ G2)


def solve_reduced(red: ReducedProblem, tol: float = 1e-12) -> np.ndarray:
    """Dense Kronecker solve of the reduced equation (PCG with the reduced
    Sylvester preconditioner when the Kronecker size exceeds the dense cap)."""
    nv, nw = red.shape
    g = red.rhs()
    if nv * nw <= REDUCED_DENSE_CAP:
        A = np.kron(red.Qw.T, red.Mv) + np.kron(red.Sw.T, red.Nv) + np.kron(red.Mw.T, red.Qv)
        try:
            y = sla.solve(A, g.ravel(order="F"))
        except sla.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"singular reduced system: {exc}") from exc
        Y = y.reshape((nv, nw), order="F")
    else:
        Y = _reduced_pcg(red, g, tol)
    res = np.linalg.norm(g - red.apply(Y))
    gn = np.linalg.norm(g)
    if gn > 0 and res / gn > 1e-8:
        raise np.linalg.LinAlgError(f"reduced solve residual {res / gn:.1e}")
    return Y


def _reduced_pcg(red: ReducedProblem, G, tol):
    lh, Xh = sla.eigh(red.Qv, red.Mv)
    lt, Xt = sla.eigh(red.Qw, red.Mw)
    denom = lh[:, None] + lt[None, :]

    def prec(R):
        return Xh @ ((Xh.T @ R @ Xt) / denom) @ Xt.T

    X = np.zeros_like(G)
    R = G.copy()
    Z = prec(R)
    P = Z.copy()
    gamma = np.sum(R * Z)
    gn = np.linalg.norm(G)
    for _ in range(5000):
        AP = red.apply(P)
        alpha = gamma / np.sum(P * AP)
        X += alpha * P
        R -= alpha * AP
        if np.linalg.norm(R) <= tol * gn:
            break
        Z = prec(R)
        gnew = np.sum(R * Z)
        P = Z + (gnew / gamma) * P
        gamma = gnew
    return X


def lowrank_residual_norm(G1, G2, V, Y, W, M_h, N_h, Q_h, M_t, S_t, Q_t) -> float:
    """||G1 G2^T - M_h U Q_t - N_h U S_t - Q_h U M_t||_F for U = V Y W^T,
    computed from thin QR factors without forming the residual."""
    VY = V @ Y
    L = np.column_stack([G1, -(M_h @ VY), -(N_h @ VY), -(Q_h @ VY)])
    Rt = np.column_stack([G2, Q_t @ W, S_t @ W, M_t @ W])
    _, rl = np.linalg.qr(L)
    _, rr = np.linalg.qr(Rt)
    return float(np.linalg.norm(rl @ rr.T))


# ---------------------------------------------------------------------------
# driver


def galerkin_solve(op: KronOperator, G: LowRankMatrix, tol: float = 1e-5,
                   max_iter: int = 200) -> SolveReport:
    """Two-sided rational Krylov Galerkin solver for the optimal operator."""
    t0 = time.perf_counter()
    if op.flavor != "optimal":
        raise ValueError("Galerkin projection expects the optimal four-term operator")
    (Q_t, M_h), (N_t, _), (_, N_h), (M_t, Q_h) = op.terms
    Q_t, N_t, M_t = (np.asarray(a) for a in (Q_t, N_t, M_t))
    S_t = N_t + N_t.T
    M_h, N_h, Q_h = (sp.csr_matrix(a) for a in (M_h, N_h, Q_h))
    G1, G2 = G.left, G.right
    scale = op.norm_scale()
    g_norm = G.norm()
    n_s, n_t = op.shape
    if g_norm == 0:
        U = LowRankMatrix(np.zeros((n_s, 0)), np.zeros((n_t, 0)))
        return SolveReport("galerkin", U, 0, True, [0.0], [0.0], time.perf_counter() - t0,
                           "zero rhs", (0, 0))

    space = _SideSolver(M_h, N_h, Q_h, sparse=True)
    tside = _SideSolver(M_t, S_t, Q_t, sparse=False)
    sb = spectral_bounds(Q_h, M_h)
    tb = spectral_bounds(Q_t, M_t)
    Vb = RationalKrylovBasis.from_seed(G1)
    Wb = RationalKrylovBasis.from_seed(G2)
    hist_be, hist_r = [], []
    Y = None
    message = "maximum iterations reached"
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        red = project(Vb.V, Wb.V, M_h, N_h, Q_h, M_t, S_t, Q_t, G1, G2)
        try:
            Y = solve_reduced(red)
        except np.linalg.LinAlgError:
            Y = None
        if Y is not None:
            rn = lowrank_residual_norm(G1, G2, Vb.V, Y, Wb.V, M_h, N_h, Q_h, M_t, S_t, Q_t)
            be = backward_error(rn, g_norm, float(np.linalg.norm(Y)), scale)
            hist_r.append(rn)
            hist_be.append(be)
            if be <= tol:
                converged, message = True, "converged"
                break
        ritz_s = sla.eigh(red.Qv, red.Mv, eigvals_only=True)
        ritz_t = sla.eigh(red.Qw, red.Mw, eigvals_only=True)
        s = adaptive_shift(sb, ritz_s if Vb.steps else None)
        ell = adaptive_shift(tb, ritz_t if Wb.steps else None)
        try:
            Vn = extend_space(Vb, space, s)
            Wn = extend_space(Wb, tside, ell)
        except SingularShiftError as exc:
            message = f"basis extension failed: {exc}"
            break
        if Vn.dim == Vb.dim and Wn.dim == Wb.dim and Vn.steps >= Vn.dim and Wn.steps >= Wn.dim:
            message = "basis saturated without convergence"
            Vb, Wb = Vn, Wn
            break
        Vb, Wb = Vn, Wn
    if Y is None:
        Y = np.zeros((Vb.dim, Wb.dim))
    U = LowRankMatrix(Vb.V[:, : Y.shape[0]] @ Y, Wb.V[:, : Y.shape[1]])
    rep = SolveReport("galerkin", U, it, converged, hist_be, hist_r, time.perf_counter() - t0,
                      message, (Vb.dim, Wb.dim))
    rep.bases = (Vb, Wb)
    rep.Y = Y
    return rep


__all__ = [
    "RationalKrylovBasis",
    "ReducedProblem",
    "SingularShiftError",
    "adaptive_shift",
    "extend_space",
    "galerkin_solve",
    "lowrank_residual_norm",
    "orth_extend",
    "project",
    "solve_reduced",
    "spectral_bounds",
]

"""Matrix-oriented preconditioned conjugate gradients for the four-term equation.

Two operator preconditioners are provided: the leading-order Sylvester part
``Q_t (x) M_h + M_t (x) Q_h`` and the ``K^T M^{-1} K`` factorization. For
spatial sizes above ``large_space_threshold`` the residual is truncated to low
rank and the inner Sylvester equations are solved by a rational Krylov
Galerkin method acting on the spatial matrices only.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .discretization import KronOperator, LowRankMatrix
from .mateq import DENSE_SPACE_CAP, ShiftedSylvesterSolver, SymSylvesterSolver

log = logging.getLogger(__name__)

PRECONDITIONERS = ("none", "sylvester", "kmk")


@dataclass(frozen=True)
class PcgConfig:
    tol: float = 1e-5
    max_iter: int = 500
    preconditioner: str = "none"
    large_space_threshold: int = DENSE_SPACE_CAP
    truncation_rank: int = 4
    inner_tol: float = 1e-8
    kmk_orientation: str = "psd"

    def __post_init__(self):
        if self.kmk_orientation not in ("psd", "literal"):
            raise ValueError("kmk_orientation must be 'psd' or 'literal'")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        if self.truncation_rank < 1:
            raise ValueError("truncation rank must be >= 1")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"preconditioner must be one of {PRECONDITIONERS}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class SolveReport:
    """Outcome of an iterative or direct solve.

    ``U`` is a dense (space x time) array for PCG and a LowRankMatrix for
    the Galerkin method. ``iterations`` counts PCG steps or Galerkin outer
    steps; ``basis_dims`` records the Galerkin space/time basis sizes.
    """

    solver: str
    U: object
    iterations: int
    converged: bool
    backward_errors: list = field(default_factory=list)
    residual_norms: list = field(default_factory=list)
    seconds: float = 0.0
    message: str = ""
    basis_dims: tuple | None = None

    @property
    def backward_error(self) -> float:
        return self.backward_errors[-1] if self.backward_errors else float("nan")

    def dense_solution(self) -> np.ndarray:
        return self.U.full() if isinstance(self.U, LowRankMatrix) else np.asarray(self.U)


def backward_error(res_norm: float, g_norm: float, u_norm: float, scale: float) -> float:
    """||R|| / (||G|| + ||U|| * sum_terms ||T||_F ||S||_F)."""
    return res_norm / (g_norm + u_norm * scale)


# ---------------------------------------------------------------------------
# low-rank truncation


def truncate_rank(X, r: int) -> LowRankMatrix:
    """Best rank-``r`` approximation in the Frobenius norm."""
    if r < 1:
        raise ValueError("rank must be >= 1")
    if isinstance(X, LowRankMatrix):
        ql, rl = np.linalg.qr(X.left)
        qr_, rr = np.linalg.qr(X.right)
        u, s, vt = np.linalg.svd(rl @ rr.T)
        u, v = ql @ u, qr_ @ vt.T
    else:
        u, s, vt = np.linalg.svd(np.asarray(X, dtype=float), full_matrices=False)
        v = vt.T
    k = min(r, s.size)
    return LowRankMatrix(u[:, :k] * s[:k], v[:, :k])


# ---------------------------------------------------------------------------
# rational Krylov Galerkin for A Z + M Z T = F (spatial side large, T small)


class _ShiftedSolves:
    """Factorizations of A + s M reused across calls (sparse LU below 50k)."""

    def __init__(self, A, M, inner_tol):
        self.A = sp.csc_matrix(A)
        self.M = sp.csc_matrix(M)
        self.tol = inner_tol
        self._lu = {}

    def solve(self, s, b):
        s = complex(s)
        key = s
        n = self.A.shape[0]
        if n <= 50000:
            if key not in self._lu:
                mat = self.A + (s.real if s.imag == 0 else s) * self.M
                if len(self._lu) > 64:
                    self._lu.clear()
                self._lu[key] = spla.splu(sp.csc_matrix(mat))
            lu = self._lu[key]
            if np.iscomplexobj(b) and not np.iscomplexobj(lu.U.data):
                return lu.solve(np.ascontiguousarray(b.real)) + 1j * lu.solve(np.ascontiguousarray(b.imag))
            return lu.solve(b.astype(lu.U.dtype))
        mat = self.A + s * self.M
        x, info = spla.gmres(mat, b, rtol=self.tol, restart=200, maxiter=50)
        if info != 0:
            raise ArithmeticError("inner iterative solve did not converge")
        return x


def rk_sylvester(A, M, T, F: LowRankMatrix, tol: float = 1e-8, max_dim: int | None = None,
                 solves: _ShiftedSolves | None = None) -> np.ndarray:
    """Solve ``A Z + M Z T = F`` with A, M sparse symmetric (M SPD), T small.

    The unknown's spatial range is sought in a rational Krylov space built
    from ``F``'s left factor. In the eigenbasis of T the columns decouple into
    shifted systems ``(A + mu_j M) z_j = f_j``; the pole for each extension is
    the eigenvalue whose column currently has the largest Galerkin residual.
    """
    n = A.shape[0]
    mu, XT = np.linalg.eig(np.asarray(T, dtype=float))
    XTinv = np.linalg.inv(XT)
    Ft_right = (F.right.T @ XT).T  # (n_t, r): F XT = L (XT^T R)^T
    L = F.left
    fnorm = np.linalg.norm(L @ Ft_right.T) if L.size else 0.0
    if fnorm == 0.0:
        return np.zeros((n, T.shape[0]))
    solves = solves or _ShiftedSolves(A, M, tol * 1e-2)
    V, _ = np.linalg.qr(L)
    V = _drop_dependent(V)
    max_dim = max_dim or n
    while True:
        Ah = V.T @ (A @ V)
        Mh = V.T @ (M @ V)
        Fh = V.T @ L
        Yh = np.empty((V.shape[1], mu.size), dtype=complex)
        resid = np.empty(mu.size)
        AV, MV = A @ V, M @ V
        Fcols = L @ Ft_right.T
        for j, m in enumerate(mu):
            rhs = Fh @ Ft_right[j]
            Yh[:, j] = np.linalg.solve(Ah + m * Mh, rhs)
            resid[j] = np.linalg.norm(Fcols[:, j] - AV @ Yh[:, j] - m * (MV @ Yh[:, j]))
        rel = np.linalg.norm(resid) / fnorm
        if rel <= tol or V.shape[1] >= max_dim:
            break
        j = int(np.argmax(resid))
        new = solves.solve(mu[j], Fcols[:, j] - AV @ Yh[:, j] - mu[j] * (MV @ Yh[:, j]))
        cand = [new.real] + ([new.imag] if np.iscomplexobj(new) and np.abs(new.imag).max() > 0 else [])
        grown = _orth_extend(V, np.column_stack(cand))
        if grown.shape[1] == V.shape[1]:
            break
        V = grown
    Z = (V @ Yh) @ XTinv
    if rel > tol:
        log.warning("rational Krylov inner solve stopped at residual %.2e", rel)
    return np.ascontiguousarray(Z.real)


def _drop_dependent(V, tol=1e-12):
    keep = np.linalg.norm(V, axis=0) > tol
    return V[:, keep]


def _orth_extend(V, C, drop_tol: float = 1e-10):
    """Append the columns of C orthogonalized (twice) against V."""
    for c in C.T:
        nrm0 = np.linalg.norm(c)
        if nrm0 == 0:
            continue
        for _ in range(2):
            c = c - V @ (V.T @ c)
        nrm = np.linalg.norm(c)
        if nrm > drop_tol * nrm0:
            V = np.column_stack([V, c / nrm])
    return V


# ---------------------------------------------------------------------------
# preconditioners


def _optimal_factors(op: KronOperator):
    if op.flavor != "optimal" or len(op.terms) != 4:
        raise ValueError("operator preconditioners need the optimal four-term operator")
    (Q_t, M_h), (N_t, _), (_, N_h), (M_t, Q_h) = op.terms
    return M_h, N_h, Q_h, np.asarray(M_t), np.asarray(N_t), np.asarray(Q_t)


class SylvesterPreconditioner:
    """Z = P^{-1}(R) with P = Q_t (x) M_h + M_t (x) Q_h."""

    name = "sylvester"

    def __init__(self, op: KronOperator, config: PcgConfig = PcgConfig()):
        M_h, _, Q_h, M_t, _, Q_t = _optimal_factors(op)
        self.config = config
        self.large = M_h.shape[0] > config.large_space_threshold
        if self.large:
            self._A, self._M = sp.csr_matrix(Q_h), sp.csr_matrix(M_h)
            self._T = sla.solve(M_t, Q_t, assume_a="pos").T  # Q_t M_t^{-1}
            self._Mt = M_t
            self._solves = _ShiftedSolves(self._A, self._M, config.inner_tol * 1e-2)
        else:
            self._direct = SymSylvesterSolver(M_h, Q_h, M_t, Q_t,
                                              space_cap=config.large_space_threshold)

    def __call__(self, R) -> np.ndarray:
        if not self.large:
            return self._direct(R)
        Rl = truncate_rank(R, self.config.truncation_rank)
        F = LowRankMatrix(Rl.left, sla.solve(self._Mt, Rl.right, assume_a="pos"))
        return rk_sylvester(self._A, self._M, self._T, F, self.config.inner_tol,
                            solves=self._solves)


class KmkPreconditioner:
    """Z = (K^T M^{-1} K)^{-1}(R) with M = M_t (x) M_h.

    Both ``K = N_t (x) M_h + M_t (x) N_h`` ("literal") and
    ``K = N_t^T (x) M_h + M_t (x) N_h`` ("psd") reproduce the two mixed terms
    of the optimal operator. Only the second leaves a positive semidefinite
    temporal remainder ``Q_t - N_t M_t^{-1} N_t^T``, so the preconditioned
    spectrum is bounded below by one; it is the default.

    Writing ``K = (X (x) I + I (x) N_h M_h^{-1}) M`` with ``X = N M_t^{-1}``
    (N the temporal factor of K), the inverse is applied in three steps:

    1. R' = M_h^{-1} R M_t^{-1}
    2. W  solves  W X + M_h^{-1} N_h W = R'
    3. Z  solves  Z (N^T M_t^{-1}) + M_h^{-1} N_h Z = W
    """

    name = "kmk"

    def __init__(self, op: KronOperator, config: PcgConfig = PcgConfig()):
        M_h, N_h, _, M_t, N_t, _ = _optimal_factors(op)
        self.config = config
        if config.kmk_orientation == "psd":
            N_t = N_t.T
        Mt_inv = np.linalg.inv(M_t)
        T1 = N_t @ Mt_inv
        T2 = N_t.T @ Mt_inv
        self._Mt = M_t
        self.large = M_h.shape[0] > config.large_space_threshold
        if self.large:
            self._A, self._M = sp.csr_matrix(N_h), sp.csr_matrix(M_h)
            self._T1, self._T2 = T1, T2
            self._solves = _ShiftedSolves(self._A, self._M, config.inner_tol * 1e-2)
        else:
            cap = config.large_space_threshold
            self._Mh_lu = spla.splu(sp.csc_matrix(M_h))
            self._s1 = ShiftedSylvesterSolver(N_h, M_h, space_cap=cap, time_operator=T1)
            self._s2 = ShiftedSylvesterSolver(N_h, M_h, space_cap=cap, time_operator=T2)

    def __call__(self, R) -> np.ndarray:
        R = R.full() if isinstance(R, LowRankMatrix) else np.asarray(R, dtype=float)
        if not self.large:
            Rp = sla.solve(self._Mt, self._Mh_lu.solve(R).T, assume_a="pos").T
            return self._s2(self._s1(Rp))
        # M_h-multiplied forms: N_h W + M_h W T1 = R M_t^{-1}, then N_h Z + M_h Z T2 = M_h W
        r = self.config.truncation_rank
        Rl = truncate_rank(R, r)
        F1 = LowRankMatrix(Rl.left, sla.solve(self._Mt, Rl.right, assume_a="pos"))
        W = rk_sylvester(self._A, self._M, self._T1, F1, self.config.inner_tol,
                         solves=self._solves)
        Wl = truncate_rank(W, r)
        F2 = LowRankMatrix(self._M @ Wl.left, Wl.right)
        return rk_sylvester(self._A, self._M, self._T2, F2, self.config.inner_tol,
                            solves=self._solves)


def make_preconditioner(op: KronOperator, config: PcgConfig):
    if config.preconditioner == "none":
        return None
    cls = SylvesterPreconditioner if config.preconditioner == "sylvester" else KmkPreconditioner
    return cls(op, config)


def precond_sylvester(op: KronOperator, R, config: PcgConfig = PcgConfig()) -> np.ndarray:
    """One application of the Sylvester preconditioner (setup included)."""
    return SylvesterPreconditioner(op, config)(R)


def precond_kmk(op: KronOperator, R, config: PcgConfig = PcgConfig()) -> np.ndarray:
    """One application of the K^T M^{-1} K preconditioner (setup included)."""
    return KmkPreconditioner(op, config)(R)


# ---------------------------------------------------------------------------
# Algorithm: matrix PCG


def matrix_pcg(op: KronOperator, G, config: PcgConfig = PcgConfig(), precond=None,
               callback=None) -> SolveReport:
    """Matrix-oriented PCG from U0 = 0, recomputing the true residual each step.

    Stops once the backward error drops to ``config.tol``. ``precond`` overrides
    the preconditioner named in ``config``; ``callback(k, U)`` sees each iterate.
    """
    t0 = time.perf_counter()
    Gd = G.full() if isinstance(G, LowRankMatrix) else np.asarray(G, dtype=float)
    name = f"pcg-{config.preconditioner}"
    if precond is None:
        fallback = False
        try:
            precond = make_preconditioner(op, config)
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            log.warning("preconditioner setup failed (%s); using identity", exc)
            precond, fallback = None, True
        if fallback:
            name += "(identity)"
    apply_p = precond if precond is not None else (lambda R: R.copy())
    g_norm = float(np.linalg.norm(Gd))
    scale = op.norm_scale()

    X = np.zeros_like(Gd)
    R = Gd.copy()
    hist_be, hist_r = [], []

    def record(Rk, Xk):
        rn = float(np.linalg.norm(Rk))
        hist_r.append(rn)
        be = backward_error(rn, g_norm, float(np.linalg.norm(Xk)), scale) if g_norm > 0 else 0.0
        hist_be.append(be)
        return be

    be = record(R, X)
    if be <= config.tol:
        return SolveReport(name, X, 0, True, hist_be, hist_r, time.perf_counter() - t0, "zero rhs")
    Z = apply_p(R)
    P = Z.copy()
    gamma = float(np.sum(R * Z))
    for k in range(config.max_iter):
        AP = op.apply(P)
        delta = float(np.sum(P * AP))
        if not np.isfinite(delta) or not np.isfinite(gamma) or delta == 0.0:
            return SolveReport(name, X, k, False, hist_be, hist_r, time.perf_counter() - t0,
                               f"breakdown at iteration {k}: gamma={gamma}, delta={delta}")
        alpha = gamma / delta
        X = X + alpha * P
        R = Gd - op.apply(X)
        if callback is not None:
            callback(k + 1, X)
        be = record(R, X)
        if be <= config.tol:
            return SolveReport(name, X, k + 1, True, hist_be, hist_r, time.perf_counter() - t0,
                               "converged")
        Z = apply_p(R)
        gamma_new = float(np.sum(R * Z))
        beta = gamma_new / gamma
        gamma = gamma_new
        P = Z + beta * P
    return SolveReport(name, X, config.max_iter, False, hist_be, hist_r,
                       time.perf_counter() - t0, "maximum iterations reached")


__all__ = [
    "KmkPreconditioner",
    "PRECONDITIONERS",
    "PcgConfig",
    "SolveReport",
    "SylvesterPreconditioner",
    "backward_error",
    "make_preconditioner",
    "matrix_pcg",
    "precond_kmk",
    "precond_sylvester",
    "rk_sylvester",
    "truncate_rank",
]

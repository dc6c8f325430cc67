"""Exact-solution oracles, the Crank-Nicolson baseline and space-time L2 errors.

Oracles
-------
* radial d'Alembert: for radial data in 3D, v = r u solves the 1D wave
  equation, so u(r, t) = [F(r + ct) + F(r - ct)] / (2r) with F(s) = s u0(|s|).
* radial sine series of v = r u on (0, L), with a decay-fitted tail bound.
* box sine series (tensor quadrature of the data, Duhamel integral for
  separable forcing).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .discretization import SpaceMatrices, WaveProblem, project_initial_displacement, spatial_load
from .splines import gauss_rule

log = logging.getLogger(__name__)

_R_SMALL = 1e-8


# ---------------------------------------------------------------------------
# d'Alembert


def dalembert_radial(profile: Callable, c: float, r, t, fd_step: float = 1e-7) -> np.ndarray:
    """Spherically symmetric 3D solution for u1 = 0, f = 0.

    Uses the odd extension of ``s * u0(s)``; below r = 1e-8 the limit
    ``u0(ct) + ct u0'(ct)`` is used with a central-difference derivative.
    """
    r, t = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(t, dtype=float))

    def F(s):
        return s * profile(np.abs(s))

    ct = c * t
    out = np.empty(r.shape)
    big = r >= _R_SMALL
    rb, cb = r[big], ct[big]
    out[big] = (F(rb + cb) + F(rb - cb)) / (2.0 * rb)
    small = ~big
    if np.any(small):
        s = ct[small]
        d = (profile(s + fd_step) - profile(np.maximum(s - fd_step, 0.0))) / (
            s + fd_step - np.maximum(s - fd_step, 0.0)
        )
        out[small] = profile(s) + s * d
    return out


def dalembert_1d(u0: Callable, c: float, x, t) -> np.ndarray:
    """Free-space 1D solution 0.5 [u0(x - ct) + u0(x + ct)] for u1 = 0, f = 0."""
    x, t = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(t, dtype=float))
    return 0.5 * (u0(x - c * t) + u0(x + c * t))


# ---------------------------------------------------------------------------
# spectral oracles


def _composite_gauss(a, b, breaks=(), n_cells=64, npts=20):
    edges = np.unique(np.concatenate([[a, b], [x for x in breaks if a < x < b]]))
    pts, wts = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        q = gauss_rule(np.linspace(lo, hi, n_cells + 1), npts)
        pts.append(q.flat_points)
        wts.append(q.flat_weights)
    return np.concatenate(pts), np.concatenate(wts)


def _tail_bound(coef: np.ndarray) -> tuple[float, float]:
    """Estimate sum_{n > N} |a_n| from an algebraic fit of the envelope.

    Returns (bound, fitted order). The envelope is the running max over
    windows in the last half of the spectrum; the bound is infinite when the
    fitted order does not exceed one.
    """
    n = np.arange(1, coef.size + 1)
    half = coef.size // 2
    nwin = min(16, coef.size - half)
    idx = np.array_split(np.arange(half, coef.size), nwin)
    nn = np.array([n[i].mean() for i in idx])
    env = np.array([np.abs(coef[i]).max() for i in idx])
    ok = env > 0
    if ok.sum() < 2:
        return 0.0, np.inf
    p = -np.polyfit(np.log(nn[ok]), np.log(env[ok]), 1)[0]
    C = np.max(env[ok] * nn[ok] ** p) * 2.0
    N = coef.size
    if p <= 1.0:
        return np.inf, p
    return float(C * N ** (1.0 - p) / (p - 1.0)), float(p)


@dataclass(frozen=True)
class RadialSeries:
    """v(r, t) = r u(r, t) = sum_n b_n cos(c k_n t) sin(k_n r), k_n = n pi / L."""

    coef: np.ndarray
    c: float
    L: float
    tail: float
    order: float

    @property
    def k(self) -> np.ndarray:
        return np.arange(1, self.coef.size + 1) * np.pi / self.L

    def v(self, r, t) -> np.ndarray:
        r, t = np.broadcast_arrays(np.asarray(r, float), np.asarray(t, float))
        k = self.k
        out = np.empty(r.shape)
        flat_r, flat_t = r.ravel(), t.ravel()
        for s in range(0, flat_r.size, 256):
            rr, tt = flat_r[s:s + 256], flat_t[s:s + 256]
            out.ravel()[s:s + 256] = (np.sin(np.outer(rr, k)) * np.cos(self.c * np.outer(tt, k))) @ self.coef
        return out

    def __call__(self, r, t) -> np.ndarray:
        r = np.asarray(r, float)
        return self.v(r, t) / r

    def bound(self, r) -> np.ndarray:
        """Pointwise truncation bound for u at radius r."""
        return self.tail / np.asarray(r, float)


def radial_series(profile: Callable, c: float, n_modes: int = 4096, L: float = 0.5,
                  breaks=(0.2,)) -> RadialSeries:
    """Sine series of r u0(r) on (0, L) by composite Gauss quadrature split at ``breaks``."""
    x, w = _composite_gauss(0.0, L, breaks, n_cells=max(64, n_modes // 8), npts=12)
    k = np.arange(1, n_modes + 1) * np.pi / L
    g = x * profile(x) * w
    coef = np.empty(n_modes)
    for s in range(0, n_modes, 512):
        coef[s:s + 512] = (2.0 / L) * (np.sin(np.outer(k[s:s + 512], x)) @ g)
    tail, order = _tail_bound(coef)
    return RadialSeries(coef, c, L, tail, order)


@dataclass(frozen=True)
class SpectralSolution:
    """w(t, x) = sum_n w_n(t) e_n(x) on the unit box, e_n = prod sqrt(2) sin(n_a pi x_a).

    ``a`` and ``b`` hold (u0, e_n) and (u1, e_n) as arrays indexed by n - 1;
    ``forcing`` holds (time function, spatial coefficient array) pairs.
    """

    dim: int
    c: float
    cutoff: int
    a: np.ndarray
    b: np.ndarray
    forcing: tuple = ()
    tail: float = 0.0
    duhamel_points: int = 64

    @property
    def lam(self) -> np.ndarray:
        n = np.arange(1, self.cutoff + 1)
        grids = np.meshgrid(*([n] * self.dim), indexing="ij")
        return self.c**2 * np.pi**2 * sum(g.astype(float) ** 2 for g in grids)

    def modal(self, t: float) -> np.ndarray:
        """Coefficients w_n(t)."""
        om = np.sqrt(self.lam)
        w = np.cos(om * t) * self.a + np.sin(om * t) / om * self.b
        for afun, beta in self.forcing:
            if t > 0:
                q = gauss_rule(np.linspace(0.0, t, 9), self.duhamel_points // 8)
                tau, wt = q.flat_points, q.flat_weights
                kern = np.sin(om[..., None] * (t - tau)) * (wt * afun(tau))
                w = w + beta * kern.sum(axis=-1) / om
        return w

    def evaluate_grid(self, t, axes) -> np.ndarray:
        """Values on the grid t x axes[0] x ... (shape (len(t), len(ax0), ...))."""
        n = np.arange(1, self.cutoff + 1)
        E = [np.sqrt(2.0) * np.sin(np.pi * np.outer(np.asarray(ax, float), n)) for ax in axes]
        out = []
        for tk in np.atleast_1d(t):
            W = self.modal(float(tk))
            for a, e in enumerate(E):
                W = np.moveaxis(np.tensordot(e, W, axes=([1], [a])), 0, a)
            out.append(W)
        return np.array(out)

    def __call__(self, t, x) -> np.ndarray:
        """Values at scattered points x (n, d) for a single time t."""
        x = np.atleast_2d(np.asarray(x, float))
        n = np.arange(1, self.cutoff + 1)
        W = self.modal(float(t))
        vals = np.empty(x.shape[0])
        for i, xi in enumerate(x):
            v = W
            for a in range(self.dim):
                e = np.sqrt(2.0) * np.sin(np.pi * n * xi[a])
                v = np.tensordot(e, v, axes=([0], [0]))
            vals[i] = v
        return vals


def _sine_coefficients(func, dim, cutoff, n_cells, npts=4):
    """(func, e_n) by tensor composite Gauss quadrature on the unit box."""
    q = gauss_rule(np.linspace(0.0, 1.0, n_cells + 1), npts)
    x, w = q.flat_points, q.flat_weights
    n = np.arange(1, cutoff + 1)
    S = np.sqrt(2.0) * np.sin(np.pi * np.outer(n, x)) * w[None, :]
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    F = np.asarray(func(pts), dtype=float).reshape((x.size,) * dim)
    for a in range(dim):
        F = np.moveaxis(np.tensordot(S, F, axes=([1], [a])), 0, a)
    return F


def spectral_solve(problem: WaveProblem, cutoff: int = 64, n_cells: int | None = None,
                   tol: float | None = None) -> SpectralSolution:
    """Sine-series solution of the box problem with tensor-quadrature coefficients."""
    d = problem.dim
    if n_cells is None:
        n_cells = max(4 * cutoff, 256) if d < 3 else 2 * cutoff
    shape = (cutoff,) * d
    a = _sine_coefficients(problem.u0, d, cutoff, n_cells) if problem.has_u0 else np.zeros(shape)
    b = _sine_coefficients(problem.u1, d, cutoff, n_cells) if problem.has_u1 else np.zeros(shape)
    forcing = tuple(
        (afun, _sine_coefficients(bfun, d, cutoff, n_cells)) for afun, bfun in problem.forcing
    )
    # tail along the first axis of the slowest-decaying coefficient family
    env = np.abs(a).reshape(cutoff, -1).max(axis=1) + np.abs(b).reshape(cutoff, -1).max(axis=1)
    tail, _ = _tail_bound(env)
    if tol is not None and tail > tol:
        log.warning("spectral cutoff %d leaves tail estimate %.2e above %.2e", cutoff, tail, tol)
    return SpectralSolution(d, problem.c, cutoff, a, b, forcing, tail)


# ---------------------------------------------------------------------------
# Crank-Nicolson baseline


@dataclass(frozen=True)
class CnConfig:
    steps: int
    tol: float = 1e-6
    T: float = 1.0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("CN needs at least one step")


@dataclass
class CnTrajectory:
    times: np.ndarray
    u: np.ndarray  # (steps + 1, n_space)
    v: np.ndarray
    inner_iterations: list = field(default_factory=list)

    def energy(self, M, S) -> np.ndarray:
        return 0.5 * np.einsum("ki,ki->k", self.v, (M @ self.v.T).T) + 0.5 * np.einsum(
            "ki,ki->k", self.u, (S @ self.u.T).T
        )

    def at(self, t) -> np.ndarray:
        """Coefficients linearly interpolated in time, shape (len(t), n_space)."""
        t = np.atleast_1d(np.asarray(t, float))
        dt = self.times[1] - self.times[0]
        k = np.clip(np.floor(t / dt).astype(int), 0, self.times.size - 2)
        th = ((t - self.times[k]) / dt)[:, None]
        return (1 - th) * self.u[k] + th * self.u[k + 1]


class CnSolverError(ArithmeticError):
    pass


def crank_nicolson_solve(problem: WaveProblem, sm: SpaceMatrices, cfg: CnConfig,
                         u0=None, v0=None) -> CnTrajectory:
    """Trapezoidal rule for u' = v, M v' = -S u + F(t), S = N_h.

    Per step: (M + dt^2/4 S) v+ = M v - dt S u - dt^2/4 S v + dt/2 (F + F+),
    u+ = u + dt/2 (v + v+). Inner solves by CG to ``cfg.tol``. Initial data are
    L2 projections unless coefficient vectors are supplied.
    """
    M, S = sm.M.tocsr(), sm.N.tocsr()
    n = M.shape[0]
    dt = cfg.T / cfg.steps
    if u0 is None:
        u0 = project_initial_displacement(problem, sm) if problem.has_u0 else np.zeros(n)
    if v0 is None:
        if problem.has_u1:
            rhs = spatial_load(problem, sm.basis, problem.u1, support=problem.u1_field is None)
            v0 = spla.splu(M.tocsc()).solve(rhs)
        else:
            v0 = np.zeros(n)
    loads = [(afun, spatial_load(problem, sm.basis, bfun, support=False))
             for afun, bfun in problem.forcing]

    def F(t):
        out = np.zeros(n)
        for afun, vec in loads:
            out += float(afun(np.array([t]))[0]) * vec
        return out

    A = (M + (dt * dt / 4.0) * S).tocsr()
    # Jacobi preconditioner keeps CG robust as dt^2 S grows
    dinv = 1.0 / A.diagonal()
    P = spla.LinearOperator(A.shape, matvec=lambda x: dinv * x)
    times = np.linspace(0.0, cfg.T, cfg.steps + 1)
    U = np.empty((cfg.steps + 1, n))
    V = np.empty((cfg.steps + 1, n))
    U[0], V[0] = u0, v0
    its = []
    for k in range(cfg.steps):
        u, v = U[k], V[k]
        rhs = M @ v - dt * (S @ u) - (dt * dt / 4.0) * (S @ v)
        if loads:
            rhs += 0.5 * dt * (F(times[k]) + F(times[k + 1]))
        count = [0]

        def cb(_):
            count[0] += 1

        if not np.any(rhs):
            vn, info = np.zeros(n), 0
        else:
            vn, info = spla.cg(A, rhs, x0=v, rtol=cfg.tol, atol=0.0, M=P, maxiter=10 * n,
                               callback=cb)
        if info != 0:
            raise CnSolverError(f"inner CG failed at step {k + 1}")
        its.append(count[0])
        V[k + 1] = vn
        U[k + 1] = u + 0.5 * dt * (v + vn)
    return CnTrajectory(times, U, V, its)


def semidiscrete_exact(sm: SpaceMatrices, u0, v0, t) -> np.ndarray:
    """Exact time integration of M u'' + S u = 0 via the pencil (S, M)."""
    lam, X = sla.eigh(sm.N.toarray(), sm.M.toarray())
    om = np.sqrt(np.maximum(lam, 0.0))
    a = X.T @ (sm.M @ u0)
    b = X.T @ (sm.M @ v0)
    t = np.atleast_1d(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        sinc = np.where(om > 0, np.sin(np.outer(t, om)) / om, t[:, None])
    coeff = np.cos(np.outer(t, om)) * a + sinc * b
    return coeff @ X.T


def cn_evaluator(traj: CnTrajectory, sm: SpaceMatrices):
    """Grid evaluator (t, axes) -> values for the CN trajectory."""
    from .discretization import mode_product

    d, n = sm.dim, sm.n_axis

    def ev(t, axes):
        C = traj.at(t)  # (nt, n^d)
        E = [sm.basis.matrix(ax, 0) for ax in axes]
        out = []
        for row in C:
            out.append(mode_product(row.reshape((n,) * d), E))
        return np.array(out)

    return ev


# ---------------------------------------------------------------------------
# space-time L2 error


def _grid_rule(n_cells, length, sub, npts):
    q = gauss_rule(np.linspace(0.0, length, n_cells + 1), npts, subdivide=sub)
    return q.flat_points, q.flat_weights


def _l2_sq(numeric, exact, T, dim, cells_t, cells_x, sub, npts, chunk):
    tp, tw = _grid_rule(cells_t, T, sub, npts)
    xp, xw = _grid_rule(cells_x, 1.0, sub, npts)
    wx = xw
    for _ in range(dim - 1):
        wx = np.multiply.outer(wx, xw)
    axes = [xp] * dim
    total = 0.0
    for s in range(0, tp.size, chunk):
        tt = tp[s:s + chunk]
        diff = numeric(tt, axes) - exact(tt, axes)
        total += float(np.tensordot(tw[s:s + chunk], np.tensordot(diff**2, wx, axes=dim), axes=1))
    return total


def l2_error_spacetime(numeric: Callable, exact: Callable, T: float = 1.0, dim: int = 1,
                       cells_t: int = 8, cells_x: int = 8, depth: int = 3, npts: int = 3,
                       chunk: int | None = None) -> tuple[float, float]:
    """||numeric - exact||_{L2((0,T) x (0,1)^d)} by composite Gauss quadrature.

    Each space-time cell is split uniformly into 2^depth pieces per axis.
    Returns (error, uncertainty) where the uncertainty is the change against
    the rule with one level less subdivision.
    """
    if chunk is None:
        per_t = (cells_x * 2**depth * npts) ** dim
        chunk = max(1, int(4e6 // per_t))
    e2 = _l2_sq(numeric, exact, T, dim, cells_t, cells_x, 2**depth, npts, chunk)
    e = np.sqrt(max(e2, 0.0))
    if depth > 0:
        e2c = _l2_sq(numeric, exact, T, dim, cells_t, cells_x, 2 ** (depth - 1), npts, chunk)
        unc = abs(e - np.sqrt(max(e2c, 0.0)))
    else:
        unc = float("nan")
    return float(e), float(unc)


def radial_exact_evaluator(problem: WaveProblem):
    """Grid evaluator of the radial d'Alembert solution (3D) or the 1D formula."""
    if problem.u0_profile is None or problem.has_u1 or problem.forcing:
        raise ValueError("closed-form oracle needs radial u0 with u1 = 0 and f = 0")
    if problem.dim == 2:
        raise ValueError("no closed-form radial solution in 2D; use spectral_solve")
    prof, c, ctr = problem.u0_profile, problem.c, problem.center

    def ev(t, axes):
        t = np.atleast_1d(t)
        grids = np.meshgrid(*axes, indexing="ij")
        if problem.dim == 1:
            x = grids[0] - ctr
            return np.array([dalembert_1d(lambda s: prof(np.abs(s)), c, x, tk) for tk in t])
        r = np.sqrt(sum((g - ctr) ** 2 for g in grids))
        return np.array([dalembert_radial(prof, c, r, tk) for tk in t])

    return ev


def discrete_evaluator(U, tm, sm):
    from .discretization import evaluate_solution_grid

    Ud = U.full() if hasattr(U, "full") else np.asarray(U)

    def ev(t, axes):
        return evaluate_solution_grid(Ud, tm, sm, np.asarray(t), axes)

    return ev


__all__ = [
    "CnConfig",
    "CnTrajectory",
    "RadialSeries",
    "SpectralSolution",
    "cn_evaluator",
    "crank_nicolson_solve",
    "dalembert_1d",
    "dalembert_radial",
    "discrete_evaluator",
    "l2_error_spacetime",
    "radial_exact_evaluator",
    "radial_series",
    "semidiscrete_exact",
    "spectral_solve",
]

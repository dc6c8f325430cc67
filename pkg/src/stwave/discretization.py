"""Space-time test/trial pair, Kronecker stiffness operator and right-hand side.

Coefficient matrices are stored as ``U[i, k]`` with ``i`` the (flattened,
axis-0-slowest) spatial index and ``k`` the temporal index, so that the
Kronecker term ``T (x) S`` acts as ``S @ U @ T.T``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import reduce
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .kernels import trial_expansion_points
from .splines import (
    SplineBasis,
    assemble_gram_1d,
    gauss_rule,
    make_spatial_test_basis_1d,
    make_temporal_test_basis,
)

MAX_SPACE_DOF = 64**3


class SizeError(ValueError):
    """Requested discretization exceeds a configured memory cap."""


# ---------------------------------------------------------------------------
# problem data


def _indicator_profile(r):
    return np.where(np.asarray(r) < 0.2, 1.0, 0.0)


def _hat_profile(r):
    r = np.asarray(r)
    return np.where(r < 0.2, 1.0 - 5.0 * r, 0.0)


@dataclass(frozen=True)
class WaveProblem:
    """Wave equation ``u_tt - c^2 Lap u = f`` on the unit box with zero Dirichlet data.

    Initial data are either radial profiles around ``center`` (functions of
    ``r``) or general fields (functions of an (n, d) point array). ``forcing``
    holds separable terms ``(a, b)`` meaning ``f(t, x) = sum a(t) b(x)``.
    """

    dim: int = 1
    T: float = 1.0
    c: float = 0.2
    u0_profile: Callable | None = None
    u1_profile: Callable | None = None
    u0_field: Callable | None = None
    u1_field: Callable | None = None
    forcing: tuple = ()
    center: float = 0.5
    jump_radius: float | None = None
    support_radius: float | None = None
    label: str = "custom"

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError("dim must be 1, 2 or 3")
        if self.T <= 0:
            raise ValueError("T must be positive")
        if self.c == 0:
            raise ValueError("wave speed must be nonzero")
        for term in self.forcing:
            if callable(term) or len(term) != 2:
                raise ValueError(
                    "only separable forcing sum a(t) b(x) is supported; "
                    "pass forcing as a tuple of (a, b) pairs"
                )

    def radius(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.sqrt(((x - self.center) ** 2).sum(axis=1))

    def _field(self, profile, fld, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if fld is not None:
            return np.asarray(fld(x), dtype=float)
        if profile is not None:
            return np.asarray(profile(self.radius(x)), dtype=float)
        return np.zeros(x.shape[0])

    def u0(self, x) -> np.ndarray:
        return self._field(self.u0_profile, self.u0_field, x)

    def u1(self, x) -> np.ndarray:
        return self._field(self.u1_profile, self.u1_field, x)

    @property
    def has_u0(self) -> bool:
        return self.u0_profile is not None or self.u0_field is not None

    @property
    def has_u1(self) -> bool:
        return self.u1_profile is not None or self.u1_field is not None

    @classmethod
    def case1(cls, dim: int = 3) -> WaveProblem:
        """Continuous data with a kink: u0 = (1 - 5r) on r < 0.2."""
        return cls(dim=dim, T=1.0, c=0.2, u0_profile=_hat_profile, jump_radius=0.2,
                   support_radius=0.2, label="case1")

    @classmethod
    def case2(cls, dim: int = 3) -> WaveProblem:
        """Discontinuous data: u0 = indicator of r < 0.2."""
        return cls(dim=dim, T=1.0, c=0.2, u0_profile=_indicator_profile, jump_radius=0.2,
                   support_radius=0.2, label="case2")

    @classmethod
    def smooth(cls, dim: int = 1, c: float = 1.0) -> WaveProblem:
        """Lowest Dirichlet eigenmode as initial displacement."""

        def mode(x):
            return np.prod(np.sin(np.pi * x), axis=1)

        return cls(dim=dim, T=1.0, c=c, u0_field=mode, label="smooth")


# ---------------------------------------------------------------------------
# matrices


def _kron_all(mats):
    return reduce(lambda a, b: sp.kron(a, b, format="csr"), mats)


@dataclass(frozen=True)
class SpaceMatrices:
    M: sp.csr_matrix
    N: sp.csr_matrix
    Q: sp.csr_matrix
    basis: SplineBasis
    dim: int
    c: float
    M1: sp.csr_matrix = field(repr=False, default=None)
    K1: sp.csr_matrix = field(repr=False, default=None)
    B1: sp.csr_matrix = field(repr=False, default=None)
    C1: sp.csr_matrix = field(repr=False, default=None)

    @property
    def n_axis(self) -> int:
        return self.basis.dim

    @property
    def size(self) -> int:
        return self.M.shape[0]


@dataclass(frozen=True)
class TimeMatrices:
    M: np.ndarray
    N: np.ndarray
    Q: np.ndarray
    basis: SplineBasis

    @property
    def size(self) -> int:
        return self.M.shape[0]


def assemble_space_matrices(
    problem: WaveProblem, n_h: int, max_dof: int | None = None
) -> SpaceMatrices:
    """Spatial M_h, N_h = (A phi_j, phi_i), Q_h = (A phi_j, A phi_i) for A = -c^2 Lap."""
    d = problem.dim
    cap = MAX_SPACE_DOF if max_dof is None else max_dof
    total = n_h**d
    if total > cap:
        raise SizeError(
            f"spatial size {n_h}^{d} = {total} exceeds cap {cap}; "
            f"this needs about {total * 8 * 30 / 2**20:.0f} MiB for the operator alone"
        )
    basis = make_spatial_test_basis_1d(n_h=n_h)
    g = assemble_gram_1d(basis)
    M1, K1, B1, C1 = g.M, g.K, g.Q, g.N
    c2 = problem.c**2

    def axis_term(mats_by_axis):
        return _kron_all(mats_by_axis)

    M = _kron_all([M1] * d)
    N = sp.csr_matrix((total, total))
    Q = sp.csr_matrix((total, total))
    for a in range(d):
        N = N + axis_term([K1 if b == a else M1 for b in range(d)])
    for a, b in itertools.product(range(d), repeat=2):
        if a == b:
            mats = [B1 if e == a else M1 for e in range(d)]
        else:
            mats = [C1 if e == a else (C1.T.tocsr() if e == b else M1) for e in range(d)]
        Q = Q + axis_term(mats)
    return SpaceMatrices(
        M.tocsr(), (c2 * N).tocsr(), (c2 * c2 * Q).tocsr(), basis, d, problem.c, M1, K1, B1, C1
    )


def assemble_time_matrices(T: float, n_t: int) -> TimeMatrices:
    """Temporal M = (rho_l, rho_k), N = (rho_l'', rho_k), Q = (rho_l'', rho_k'')."""
    basis = make_temporal_test_basis(T, n_t)
    g = assemble_gram_1d(basis)
    return TimeMatrices(g.M.toarray(), g.N.toarray(), g.Q.toarray(), basis)


# ---------------------------------------------------------------------------
# Kronecker operator


@dataclass(frozen=True)
class KronOperator:
    """Sum of Kronecker terms ``time (x) space`` acting on (space x time) matrices."""

    terms: tuple
    flavor: str = "custom"

    @property
    def shape(self) -> tuple[int, int]:
        t, s = self.terms[0]
        return s.shape[0], t.shape[0]

    def __call__(self, U: np.ndarray) -> np.ndarray:
        return self.apply(U)

    def apply(self, U: np.ndarray) -> np.ndarray:
        out = np.zeros(self.shape)
        for t, s in self.terms:
            out += s @ (U @ np.asarray(t).T)
        return out

    def dense(self) -> np.ndarray:
        out = None
        for t, s in self.terms:
            s_dense = s.toarray() if sp.issparse(s) else np.asarray(s)
            term = np.kron(np.asarray(t), s_dense)
            out = term if out is None else out + term
        return out

    def sparse(self) -> sp.csr_matrix:
        out = None
        for t, s in self.terms:
            term = sp.kron(sp.csr_matrix(t), sp.csr_matrix(s), format="csr")
            out = term if out is None else out + term
        return out.tocsr()

    def norm_scale(self) -> float:
        """sum over terms of ||time||_F ||space||_F (backward-error denominator)."""
        total = 0.0
        for t, s in self.terms:
            ns = sp.linalg.norm(s) if sp.issparse(s) else np.linalg.norm(s)
            total += np.linalg.norm(t) * ns
        return total


def build_stiffness(flavor: str, tm: TimeMatrices, sm: SpaceMatrices) -> KronOperator:
    """Optimal flavor: Q_t(x)M_h + N_t(x)N_h^T + N_t^T(x)N_h + M_t(x)Q_h.

    General flavor (trial = test splines): N_t^T(x)M_h + M_t(x)N_h^T.
    """
    if tm.M.shape[0] != tm.Q.shape[0] or sm.M.shape[0] != sm.Q.shape[0]:
        raise ValueError("nonconforming dimensions")
    NhT = sm.N.T.tocsr()
    if flavor == "optimal":
        terms = ((tm.Q, sm.M), (tm.N, NhT), (tm.N.T.copy(), sm.N), (tm.M, sm.Q))
    elif flavor == "general":
        terms = ((tm.N.T.copy(), sm.M), (tm.M, NhT))
    else:
        raise ValueError(f"unknown flavor {flavor!r}")
    return KronOperator(terms, flavor)


def identity_operator(n_space: int, n_time: int) -> KronOperator:
    return KronOperator(((np.eye(n_time), sp.identity(n_space, format="csr")),), "identity")


# ---------------------------------------------------------------------------
# low-rank matrices


@dataclass(frozen=True)
class LowRankMatrix:
    """X = left @ right.T with left (n_space, r) and right (n_time, r)."""

    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        left = np.asarray(self.left, dtype=float).reshape(np.shape(self.left)[0], -1)
        right = np.asarray(self.right, dtype=float).reshape(np.shape(self.right)[0], -1)
        if left.shape[1] != right.shape[1]:
            raise ValueError("factor ranks differ")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    @property
    def rank(self) -> int:
        return self.left.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.left.shape[0], self.right.shape[0]

    def full(self) -> np.ndarray:
        return self.left @ self.right.T

    def norm(self) -> float:
        if self.rank == 0:
            return 0.0
        _, rl = np.linalg.qr(self.left)
        _, rr = np.linalg.qr(self.right)
        return float(np.linalg.norm(rl @ rr.T))

    def orthonormalized(self, tol: float = 0.0) -> LowRankMatrix:
        """Equivalent factors with orthonormal left columns and rank revealed by SVD."""
        if self.rank == 0:
            return self
        ql, rl = np.linalg.qr(self.left)
        qr_, rr = np.linalg.qr(self.right)
        u, s, vt = np.linalg.svd(rl @ rr.T)
        keep = s > tol * (s[0] if s.size else 0.0)
        if not np.any(keep):
            return LowRankMatrix(np.zeros((self.shape[0], 0)), np.zeros((self.shape[1], 0)))
        return LowRankMatrix(ql @ u[:, keep], qr_ @ (vt[keep].T * s[keep]))


# ---------------------------------------------------------------------------
# right-hand side


def _box_gauss(lo, hi, npts):
    """Tensor Gauss points/weights for a batch of boxes lo/hi of shape (nb, d)."""
    nb, d = lo.shape
    xg, wg = np.polynomial.legendre.leggauss(npts)
    grids = np.array(list(itertools.product(range(npts), repeat=d)))
    ref = xg[grids]  # (nq, d)
    wref = np.prod(wg[grids], axis=1)
    half = 0.5 * (hi - lo)
    pts = lo[:, None, :] + half[:, None, :] * (ref[None, :, :] + 1.0)
    wts = np.prod(half, axis=1)[:, None] * wref[None, :]
    return pts.reshape(-1, d), wts.ravel()


def _box_distance_range(lo, hi, center):
    near = np.clip(center, lo, hi)
    dmin = np.sqrt(((near - center) ** 2).sum(axis=1))
    far = np.where(np.abs(lo - center) > np.abs(hi - center), lo, hi)
    dmax = np.sqrt(((far - center) ** 2).sum(axis=1))
    return dmin, dmax


def radial_quadrature(
    dim: int,
    n_cells: int,
    center: float = 0.5,
    jump_radius: float | None = None,
    support_radius: float | None = None,
    npts: int = 3,
    depth: int = 6,
):
    """Composite Gauss points on the uniform grid of the unit box with dyadic
    refinement of cells cut by the sphere ``|x - center| = jump_radius``.

    Cells entirely outside ``support_radius`` are skipped.
    """
    edges = np.linspace(0.0, 1.0, n_cells + 1)
    idx = np.array(list(itertools.product(range(n_cells), repeat=dim)))
    lo = edges[idx]
    hi = edges[idx + 1]
    ctr = np.full(dim, center)
    pts, wts = [], []
    for level in range(depth + 1):
        if lo.shape[0] == 0:
            break
        dmin, dmax = _box_distance_range(lo, hi, ctr)
        keep = np.ones(lo.shape[0], dtype=bool)
        if support_radius is not None:
            keep &= dmin < support_radius
        cut = np.zeros_like(keep)
        if jump_radius is not None and level < depth:
            cut = keep & (dmin < jump_radius) & (dmax > jump_radius)
        regular = keep & ~cut
        if regular.any():
            p, w = _box_gauss(lo[regular], hi[regular], npts)
            pts.append(p)
            wts.append(w)
        lo, hi = lo[cut], hi[cut]
        if lo.shape[0]:
            mid = 0.5 * (lo + hi)
            corners = np.array(list(itertools.product((0, 1), repeat=dim)), dtype=bool)
            lo = np.concatenate([np.where(cn, mid, lo) for cn in corners])
            hi = np.concatenate([np.where(cn, hi, mid) for cn in corners])
    if not pts:
        return np.zeros((0, dim)), np.zeros(0)
    return np.concatenate(pts), np.concatenate(wts)


def project_on_space(basis: SplineBasis, dim: int, points: np.ndarray, weighted: np.ndarray):
    """Load vector ``sum_q weighted[q] * phi_i(x_q)`` for tensor-product basis functions."""
    n = basis.dim
    p = basis.degree
    out = np.zeros(n**dim)
    if points.shape[0] == 0:
        return out
    imap = basis.raw_to_retained
    vals, idxs = [], []
    for a in range(dim):
        spans, ders = basis.active(points[:, a], 0)
        vals.append(ders[:, 0, :])
        idxs.append(imap[spans[:, None] - p + np.arange(p + 1)[None, :]])
    for combo in itertools.product(range(p + 1), repeat=dim):
        flat = np.zeros(points.shape[0], dtype=np.int64)
        valid = np.ones(points.shape[0], dtype=bool)
        prod = weighted.copy()
        for a, j in enumerate(combo):
            ia = idxs[a][:, j]
            valid &= ia >= 0
            flat = flat * n + np.maximum(ia, 0)
            prod = prod * vals[a][:, j]
        out += np.bincount(flat[valid], weights=prod[valid], minlength=out.size)
    return out


def spatial_load(problem: WaveProblem, basis: SplineBasis, func, depth: int | None = None,
                 support: bool = True) -> np.ndarray:
    d = problem.dim
    if depth is None:
        depth = 6 if d < 3 else 3
    pts, wts = radial_quadrature(
        d, basis.dim, problem.center, problem.jump_radius,
        problem.support_radius if support else None, npts=3, depth=depth,
    )
    return project_on_space(basis, d, pts, wts * func(pts))


def assemble_rhs(
    problem: WaveProblem, tm: TimeMatrices, sm: SpaceMatrices, depth: int | None = None
) -> LowRankMatrix:
    """Low-rank G = G1 G2^T from u1 rho(0) - u0 rho'(0) + separable forcing."""
    tb = tm.basis
    r0 = tb.matrix(np.array([0.0]), 0)[0]
    rd0 = tb.matrix(np.array([0.0]), 1)[0]
    left, right = [], []
    if problem.has_u1:
        left.append(spatial_load(problem, sm.basis, problem.u1, depth, support=problem.u1_field is None))
        right.append(r0)
    if problem.has_u0:
        left.append(-spatial_load(problem, sm.basis, problem.u0, depth, support=problem.u0_field is None))
        right.append(rd0)
    if problem.forcing:
        q = gauss_rule(tb.breakpoints, 4, subdivide=4)
        phi_t = tb.matrix(q.flat_points, 0)
        for a_fn, b_fn in problem.forcing:
            left.append(spatial_load(problem, sm.basis, b_fn, depth, support=False))
            right.append(phi_t.T @ (q.flat_weights * a_fn(q.flat_points)))
    n_s, n_t = sm.size, tm.size
    if not left:
        return LowRankMatrix(np.zeros((n_s, 0)), np.zeros((n_t, 0)))
    return LowRankMatrix(np.column_stack(left), np.column_stack(right))


# ---------------------------------------------------------------------------
# evaluation of the discrete solution


def _check_points(points, dim, T):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != dim + 1:
        raise ValueError(f"points must have {dim + 1} columns (t, x_1..x_d)")
    t, x = pts[:, 0], pts[:, 1:]
    tol = 1e-14
    if np.any(t < -tol) or np.any(t > T + tol) or np.any(x < -tol) or np.any(x > 1 + tol):
        raise ValueError("points outside the space-time cylinder [0, T] x [0, 1]^d")
    return np.clip(t, 0, T), np.clip(x, 0, 1)


def evaluate_solution(U, tm: TimeMatrices, sm: SpaceMatrices, points) -> np.ndarray:
    """u(t, x) = sum U[i, k] (rho_k''(t) phi_i(x) + rho_k(t) A phi_i(x))."""
    d = sm.dim
    t, x = _check_points(points, d, tm.basis.interval[1])
    tspans, tders = tm.basis.active(t, 2)
    sb = sm.basis
    spans, vals, dds = [], [], []
    for a in range(d):
        s, dr = sb.active(x[:, a], 2)
        spans.append(s)
        vals.append(dr[:, 0, :])
        dds.append(dr[:, 2, :])
    return trial_expansion_points(
        np.ascontiguousarray(U, dtype=float),
        tspans,
        np.ascontiguousarray(tders[:, 2, :]),
        np.ascontiguousarray(tders[:, 0, :]),
        tm.basis.raw_to_retained,
        np.ascontiguousarray(np.stack(spans, axis=1)),
        np.ascontiguousarray(np.stack(vals, axis=1)),
        np.ascontiguousarray(np.stack(dds, axis=1)),
        sb.raw_to_retained,
        sb.dim,
        -sm.c**2,
    )


def mode_product(X: np.ndarray, mats: Sequence[np.ndarray]) -> np.ndarray:
    """Apply ``mats[a]`` along axis ``a`` of the tensor ``X``."""
    for a, m in enumerate(mats):
        X = np.moveaxis(np.tensordot(m, X, axes=([1], [a])), 0, a)
    return X


def evaluate_solution_grid(U, tm: TimeMatrices, sm: SpaceMatrices, t, axes) -> np.ndarray:
    """Trial expansion on the tensor grid ``t x axes[0] x ... x axes[d-1]``.

    Returns an array of shape (len(t), len(axes[0]), ..., len(axes[d-1])).
    """
    d = sm.dim
    n = sm.n_axis
    tb, sb = tm.basis, sm.basis
    Rdd = tb.matrix(t, 2)
    R = tb.matrix(t, 0)
    E0 = [sb.matrix(ax, 0) for ax in axes]
    E2 = [sb.matrix(ax, 2) for ax in axes]
    Ut = np.asarray(U).reshape((n,) * d + (tm.size,))
    phi = mode_product(Ut, E0)
    lap = sum(mode_product(Ut, [E2[b] if b == a else E0[b] for b in range(d)]) for a in range(d))
    vals = np.tensordot(Rdd, phi, axes=([1], [d])) - sm.c**2 * np.tensordot(R, lap, axes=([1], [d]))
    return vals


def project_initial_displacement(problem: WaveProblem, sm: SpaceMatrices, depth=None):
    """L2 projection coefficients of u0 onto the spatial basis (used by the baseline)."""
    from scipy.sparse.linalg import splu

    rhs = spatial_load(problem, sm.basis, problem.u0, depth, support=problem.u0_field is None)
    return splu(sm.M.tocsc()).solve(rhs)


def default_depth(dim: int) -> int:
    return 6 if dim < 3 else 3


__all__ = [
    "KronOperator",
    "LowRankMatrix",
    "MAX_SPACE_DOF",
    "SizeError",
    "SpaceMatrices",
    "TimeMatrices",
    "WaveProblem",
    "assemble_rhs",
    "assemble_space_matrices",
    "assemble_time_matrices",
    "build_stiffness",
    "evaluate_solution",
    "evaluate_solution_grid",
    "identity_operator",
    "mode_product",
    "project_on_space",
    "radial_quadrature",
    "spatial_load",
]

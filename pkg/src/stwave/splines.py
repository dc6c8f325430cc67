"""Univariate B-spline spaces, Gauss quadrature and 1D Gram matrices.

All spaces are built from open knot vectors (multiplicity ``degree + 1`` at both
ends); boundary conditions are imposed by dropping the raw B-splines that violate
them, so the retained functions are plain, unnormalized B-splines.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .kernels import basis_funs_batch

BC_NONE = "none"
BC_DIRICHLET = "dirichlet"
BC_TERMINAL = "terminal"
BOUNDARY_CONDITIONS = (BC_NONE, BC_DIRICHLET, BC_TERMINAL)

_BC_TOL = 1e-12


@dataclass(frozen=True)
class KnotVector:
    breakpoints: np.ndarray
    multiplicities: np.ndarray
    degree: int

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        mult = np.asarray(self.multiplicities, dtype=np.int64)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "multiplicities", mult)
        if self.degree < 0:
            raise ValueError("degree must be >= 0")
        if bp.ndim != 1 or bp.shape != mult.shape or bp.size < 2:
            raise ValueError("need at least two breakpoints, one multiplicity each")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        if np.any(mult < 1) or np.any(mult > self.degree + 1):
            raise ValueError("multiplicities must lie in [1, degree + 1]")
        if self.dimension <= 0:
            raise ValueError("knot vector spans no basis function")

    @classmethod
    def open_uniform(cls, a: float, b: float, n_intervals: int, degree: int) -> KnotVector:
        bp = np.linspace(a, b, n_intervals + 1)
        mult = np.ones(n_intervals + 1, dtype=np.int64)
        mult[0] = mult[-1] = degree + 1
        return cls(bp, mult, degree)

    @property
    def knots(self) -> np.ndarray:
        return np.repeat(self.breakpoints, self.multiplicities)

    @property
    def dimension(self) -> int:
        return int(self.multiplicities.sum()) - self.degree - 1

    @property
    def interval(self) -> tuple[float, float]:
        return float(self.breakpoints[0]), float(self.breakpoints[-1])


@dataclass(frozen=True)
class SplineBasis:
    """B-spline basis with boundary-condition-aware index map.

    ``index_map[j]`` is the raw B-spline index of retained function ``j``.
    """

    knots: KnotVector
    bc: str = BC_NONE
    index_map: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.bc not in BOUNDARY_CONDITIONS:
            raise ValueError(f"unknown boundary condition {self.bc!r}")
        if self.index_map is None:
            object.__setattr__(self, "index_map", _retained_indices(self.knots, self.bc))
        else:
            object.__setattr__(self, "index_map", np.asarray(self.index_map, dtype=np.int64))

    @property
    def degree(self) -> int:
        return self.knots.degree

    @property
    def dim(self) -> int:
        return int(self.index_map.size)

    @property
    def raw_dim(self) -> int:
        return self.knots.dimension

    @property
    def interval(self) -> tuple[float, float]:
        return self.knots.interval

    @property
    def breakpoints(self) -> np.ndarray:
        return self.knots.breakpoints

    @property
    def raw_to_retained(self) -> np.ndarray:
        """Raw index -> retained index, -1 for dropped functions."""
        out = -np.ones(self.raw_dim, dtype=np.int64)
        out[self.index_map] = np.arange(self.dim)
        return out

    def active(self, x, nders: int = 0):
        """Spans and raw active derivatives at points ``x`` (see ``basis_funs_batch``)."""
        return basis_funs_batch(self.knots.knots, self.degree, np.atleast_1d(x), nders)

    def matrix(self, x, deriv: int = 0) -> np.ndarray:
        """Dense (npts, dim) matrix of the ``deriv``-th derivative at points ``x``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.zeros((x.size, self.dim))
        if deriv > self.degree:
            return out
        spans, ders = self.active(x, deriv)
        p = self.degree
        imap = self.raw_to_retained
        rows = np.repeat(np.arange(x.size), p + 1)
        raw = (spans[:, None] - p + np.arange(p + 1)[None, :]).ravel()
        cols = imap[raw]
        keep = cols >= 0
        np.add.at(out, (rows[keep], cols[keep]), ders[:, deriv, :].ravel()[keep])
        return out


def _retained_indices(kv: KnotVector, bc: str) -> np.ndarray:
    n = kv.dimension
    if bc == BC_NONE:
        return np.arange(n, dtype=np.int64)
    a, b = kv.interval
    p = kv.degree
    drop = np.zeros(n, dtype=bool)
    ends = [(b, 1)] if bc == BC_TERMINAL else [(a, 0), (b, 0)]
    for x, nd in ends:
        spans, ders = basis_funs_batch(kv.knots, p, np.array([x]), nd)
        raw = spans[0] - p + np.arange(p + 1)
        vals = np.abs(ders[0, : nd + 1, :]).max(axis=0)
        drop[raw[vals > _BC_TOL]] = True
    return np.flatnonzero(~drop).astype(np.int64)


def eval_basis(basis: SplineBasis, x: float, deriv: int = 0) -> np.ndarray:
    """All retained basis values (or derivatives) at a single point ``x``."""
    a, b = basis.interval
    if not a <= x <= b:
        raise ValueError(f"x={x} outside [{a}, {b}]")
    return basis.matrix(np.array([x]), deriv)[0]


def make_temporal_test_basis(T: float, n_t: int) -> SplineBasis:
    """Quadratic splines on ``n_t`` uniform intervals of [0, T] vanishing to
    first order at ``T`` (value and derivative zero), dimension ``n_t``."""
    if n_t < 3:
        raise ValueError("temporal basis needs n_t >= 3")
    if T <= 0:
        raise ValueError("T must be positive")
    return SplineBasis(KnotVector.open_uniform(0.0, T, n_t, 2), BC_TERMINAL)


def make_spatial_test_basis_1d(h: float | None = None, n_h: int | None = None) -> SplineBasis:
    """Quadratic splines on [0, 1] with homogeneous Dirichlet values, dimension ``n_h``."""
    if n_h is None:
        if h is None:
            raise ValueError("give h or n_h")
        n_h = int(round(1.0 / h))
        if not math.isclose(n_h * h, 1.0, rel_tol=1e-12):
            raise ValueError("1/h must be an integer")
    if n_h < 2:
        raise ValueError("spatial basis needs n_h >= 2")
    return SplineBasis(KnotVector.open_uniform(0.0, 1.0, n_h, 2), BC_DIRICHLET)


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray  # (n_intervals, nq)
    weights: np.ndarray  # (n_intervals, nq)
    order: int

    @property
    def flat_points(self) -> np.ndarray:
        return self.points.ravel()

    @property
    def flat_weights(self) -> np.ndarray:
        return self.weights.ravel()


def gauss_rule(breakpoints, npts: int, subdivide: int = 1) -> QuadratureRule:
    """Composite Gauss-Legendre rule, ``npts`` points per (sub)interval."""
    bp = np.asarray(breakpoints, dtype=float)
    if subdivide > 1:
        fine = [np.linspace(lo, hi, subdivide + 1)[:-1] for lo, hi in zip(bp[:-1], bp[1:])]
        bp = np.concatenate(fine + [bp[-1:]])
    xg, wg = np.polynomial.legendre.leggauss(npts)
    lo, hi = bp[:-1, None], bp[1:, None]
    half = 0.5 * (hi - lo)
    return QuadratureRule(lo + half * (xg[None, :] + 1.0), half * wg[None, :], 2 * npts - 1)


def default_quadrature(basis: SplineBasis) -> QuadratureRule:
    npts = math.ceil((2 * basis.degree + 1) / 2) + 1
    return gauss_rule(basis.breakpoints, npts)


@dataclass(frozen=True)
class GramSet1D:
    """Rows belong to the first basis, columns to the second.

    M = (a, b), N = (a'', b), Q = (a'', b''), K = (a', b').
    """

    M: sp.csr_matrix
    N: sp.csr_matrix
    Q: sp.csr_matrix
    K: sp.csr_matrix
    length: float
    shape: tuple[int, int]


def assemble_gram_1d(
    test: SplineBasis, trial: SplineBasis | None = None, quad: QuadratureRule | None = None
) -> GramSet1D:
    trial = test if trial is None else trial
    if test.breakpoints.shape != trial.breakpoints.shape or not np.allclose(
        test.breakpoints, trial.breakpoints, rtol=0, atol=1e-14
    ):
        raise ValueError("bases must share breakpoints")
    if quad is None:
        npts = math.ceil((test.degree + trial.degree + 1) / 2) + 1
        quad = gauss_rule(test.breakpoints, npts)
    x = quad.flat_points
    w = quad.flat_weights
    nq = x.size

    def local(basis):
        spans, ders = basis.active(x, 2)
        p = basis.degree
        raw = spans[:, None] - p + np.arange(p + 1)[None, :]
        return basis.raw_to_retained[raw], ders

    ia, da = local(test)
    ib, db = local(trial)
    pa, pb = ia.shape[1], ib.shape[1]
    rows = np.broadcast_to(ia[:, :, None], (nq, pa, pb)).ravel()
    cols = np.broadcast_to(ib[:, None, :], (nq, pa, pb)).ravel()
    keep = (rows >= 0) & (cols >= 0)
    shape = (test.dim, trial.dim)

    def gram(ka, kb):
        vals = w[:, None, None] * da[:, ka, :, None] * db[:, kb, None, :]
        mat = sp.coo_matrix((vals.ravel()[keep], (rows[keep], cols[keep])), shape=shape)
        return mat.tocsr()

    a, b = test.interval
    return GramSet1D(gram(0, 0), gram(2, 0), gram(2, 2), gram(1, 1), b - a, shape)

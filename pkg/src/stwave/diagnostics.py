"""Stability and conditioning diagnostics.

Inf-sup constants from generalized eigenproblems, condition numbers of the
Kronecker factors and of the stiffness matrix, spectral-equivalence ratios,
and the one-dimensional very weak ODE study ``-u'' = f`` on (0, 1).
"""
from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Callable, Sequence

import mpmath
import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .discretization import (
    WaveProblem,
    assemble_space_matrices,
    assemble_time_matrices,
    build_stiffness,
)
from .splines import (
    BC_DIRICHLET,
    BC_NONE,
    BC_TERMINAL,
    KnotVector,
    SplineBasis,
    assemble_gram_1d,
    gauss_rule,
)

DENSE_STUDY_CAP = 5000


class SingularGramError(np.linalg.LinAlgError):
    """A Gram matrix passed to an inf-sup computation is not SPD."""


def _dense(A) -> np.ndarray:
    return A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)


# ---------------------------------------------------------------------------
# study container


@dataclass
class StudyResult:
    """Rows ``(refinement, dof, metric, value)`` plus free-form metadata."""

    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, refinement: int, dof: int, metric: str, value: float) -> None:
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"metric {metric!r} at refinement {refinement} is not finite")
        prev = self.refinements(metric)
        if prev and refinement <= prev[-1]:
            raise ValueError("refinements must be strictly increasing per metric")
        self.rows.append((int(refinement), int(dof), metric, value))

    @property
    def metrics(self) -> list[str]:
        seen: dict[str, None] = {}
        for row in self.rows:
            seen.setdefault(row[2], None)
        return list(seen)

    def refinements(self, metric: str) -> list[int]:
        return [r[0] for r in self.rows if r[2] == metric]

    def values(self, metric: str) -> np.ndarray:
        return np.array([r[3] for r in self.rows if r[2] == metric])

    def slope(self, metric: str) -> float:
        """Least-squares slope of log(value) against log(h), h = 1/refinement."""
        n = np.asarray(self.refinements(metric), dtype=float)
        v = self.values(metric)
        if n.size < 2:
            raise ValueError(f"need two levels to fit a slope for {metric!r}")
        if np.any(v <= 0):
            raise ValueError(f"metric {metric!r} has non-positive values")
        return float(np.polyfit(np.log(1.0 / n), np.log(v), 1)[0])


# ---------------------------------------------------------------------------
# inf-sup constant


def infsup_constant(B, gram_u, gram_v) -> float:
    """Discrete inf-sup constant of a Petrov-Galerkin pair.

    ``B[i, j] = b(trial_j, test_i)``. The constant is ``sqrt(lambda_min)`` of
    ``B^T G_V^{-1} B x = lambda G_U x``.

    Parameters
    ----------
    B : (n_test, n_trial) array_like
    gram_u : (n_trial, n_trial) SPD Gram of the trial basis in the trial norm
    gram_v : (n_test, n_test) SPD Gram of the test basis in the test norm
    """
    Bd, Gu, Gv = _dense(B), _dense(gram_u), _dense(gram_v)
    m, n = Bd.shape
    if Gu.shape != (n, n) or Gv.shape != (m, m):
        raise ValueError("Gram shapes do not match B")
    if max(m, n) > DENSE_STUDY_CAP:
        raise ValueError(f"dense inf-sup limited to {DENSE_STUDY_CAP} unknowns")
    try:
        cv = sla.cho_factor(0.5 * (Gv + Gv.T))
    except np.linalg.LinAlgError as exc:
        raise SingularGramError(f"test Gram is not SPD: {exc}") from exc
    S = Bd.T @ sla.cho_solve(cv, Bd)
    S = 0.5 * (S + S.T)
    try:
        lam = sla.eigh(S, 0.5 * (Gu + Gu.T), eigvals_only=True, subset_by_index=[0, 0])
    except np.linalg.LinAlgError as exc:
        raise SingularGramError(f"trial Gram is not SPD: {exc}") from exc
    return float(math.sqrt(max(lam[0], 0.0)))


def infsup_optimal(T: float, n_t: int, n_h: int, dim: int = 1, c: float = 1.0) -> float:
    """Inf-sup constant of the optimal space-time pairing.

    The trial functions are ``B* phi``, so their L2 Gram is the stiffness
    matrix itself, and so is the test Gram in the induced norm.
    """
    problem = WaveProblem.smooth(dim, c)
    tm = assemble_time_matrices(T, n_t)
    sm = assemble_space_matrices(problem, n_h)
    A = build_stiffness("optimal", tm, sm).dense()
    return infsup_constant(A, A, A)


# ---------------------------------------------------------------------------
# condition numbers and spectral equivalence


def condition_number(A) -> float:
    """2-norm condition number (eigenvalues for symmetric input, else SVD)."""
    Ad = _dense(A)
    if Ad.size == 1:
        return 1.0 if Ad[0, 0] != 0 else math.inf
    if np.allclose(Ad, Ad.T, rtol=0, atol=1e-13 * np.abs(Ad).max()):
        ev = np.abs(np.linalg.eigvalsh(0.5 * (Ad + Ad.T)))
        return float(ev.max() / ev.min()) if ev.min() > 0 else math.inf
    return float(np.linalg.cond(Ad))


def power_condition(A, max_iter: int = 5000, tol: float = 1e-12, seed: int = 0) -> float:
    """Condition number from power iteration on ``A^T A`` and its inverse.

    An independent check of ``condition_number``; the inverse iteration uses
    one LU factorization of ``A``.
    """
    Ad = _dense(A)
    n = Ad.shape[0]
    rng = np.random.default_rng(seed)
    lu = sla.lu_factor(Ad)

    def dominant(apply):
        x = rng.standard_normal(n)
        x /= np.linalg.norm(x)
        lam = 0.0
        for _ in range(max_iter):
            y = apply(x)
            new = float(x @ y)
            x = y / np.linalg.norm(y)
            if abs(new - lam) <= tol * abs(new):
                return new
            lam = new
        return lam

    big = dominant(lambda x: Ad.T @ (Ad @ x))
    small_inv = dominant(lambda x: sla.lu_solve(lu, sla.lu_solve(lu, x, trans=1)))
    return float(math.sqrt(big * small_inv))


_FACTOR_NAMES = ("M_h", "N_h", "Q_h", "M_t", "N_t", "Q_t")


def condition_numbers(
    refinements: Sequence[int],
    flavor: str = "optimal",
    dim: int = 1,
    c: float = 1.0,
    T: float = 1.0,
) -> StudyResult:
    """Condition numbers of the Kronecker factors and of the stiffness matrix.

    Uses ``N_t = N_h = n`` for each ``n`` in ``refinements``. The stiffness
    matrix is skipped above the dense cap; the factors are always reported.
    """
    problem = WaveProblem.smooth(dim, c)
    out = StudyResult(metadata={"flavor": flavor, "dim": dim, "c": c, "T": T})
    for n in refinements:
        tm = assemble_time_matrices(T, n)
        sm = assemble_space_matrices(problem, n)
        mats = (sm.M, sm.N, sm.Q, tm.M, tm.N, tm.Q)
        for name, mat in zip(_FACTOR_NAMES, mats):
            out.add(n, mat.shape[0], f"kappa_{name}", condition_number(mat))
        dof = tm.size * sm.size
        if dof <= DENSE_STUDY_CAP:
            out.add(n, dof, "kappa_B", condition_number(build_stiffness(flavor, tm, sm).dense()))
    return out


def _rationalize(A: np.ndarray, max_den: int = 10**4):
    """Scale ``A`` to unit max entry and recover exact rational entries."""
    scale = float(np.abs(A).max())
    B = A / scale
    fr = [[Fraction(float(v)).limit_denominator(max_den) for v in row] for row in B]
    err = max(abs(float(f) - v) for row, brow in zip(fr, B) for f, v in zip(row, brow))
    if err > 1e-13:
        raise ValueError(f"entries are not small-denominator rationals (misfit {err:.1e})")
    return mpmath.matrix([[mpmath.mpf(f.numerator) / f.denominator for f in row] for row in fr]), scale


def _extended_ratio(Q, N, M, dps: int) -> tuple[float, float]:
    with mpmath.workdps(dps):
        (Qm, sq), (Nm, sn), (Mm, sm) = (_rationalize(A) for A in (Q, N, M))
        S = Nm.T * (mpmath.inverse(Mm) * Nm)
        L = mpmath.cholesky(Qm)
        Li = mpmath.inverse(L)
        C = Li * S * Li.T
        C = (C + C.T) / 2
        lam = sorted(mpmath.eigsy(C, eigvals_only=True))
        factor = sn * sn / (sm * sq)
        return float(lam[0]) * factor, float(lam[-1]) * factor


def spectral_equivalence_ratio(Q, N, M, dps: int | None = None) -> tuple[float, float]:
    """Extreme generalized eigenvalues of ``(N^T M^{-1} N, Q)``.

    With ``dps`` set, the matrices are rationalized (uniform-mesh spline Grams
    have small-denominator entries after scaling) and the pencil is solved in
    ``dps``-digit arithmetic; needed when ``N`` is numerically singular.
    """
    Qd, Nd, Md = _dense(Q), _dense(N), _dense(M)
    if dps is not None:
        return _extended_ratio(Qd, Nd, Md, dps)
    S = Nd.T @ sla.solve(Md, Nd, assume_a="pos")
    lam = sla.eigh(0.5 * (S + S.T), 0.5 * (Qd + Qd.T), eigvals_only=True)
    return float(lam[0]), float(lam[-1])


def spectral_equivalence_study(refinements: Sequence[int], c: float = 1.0,
                               T: float = 1.0, dps: int = 60) -> StudyResult:
    """Ratio intervals for the spatial and temporal triples across refinements.

    The temporal pencil is solved in extended precision: its smallest
    eigenvalue drops below double-precision round-off beyond a few intervals.
    """
    problem = WaveProblem.smooth(1, c)
    out = StudyResult(metadata={"dim": 1, "c": c, "T": T})
    for n in refinements:
        sm = assemble_space_matrices(problem, n)
        tm = assemble_time_matrices(T, n)
        lo, hi = spectral_equivalence_ratio(sm.Q, sm.N, sm.M)
        out.add(n, sm.size, "space_min", lo)
        out.add(n, sm.size, "space_max", hi)
        lo, hi = spectral_equivalence_ratio(tm.Q, tm.N, tm.M, dps=dps)
        out.add(n, tm.size, "time_min", lo)
        out.add(n, tm.size, "time_max", hi)
    return out


# ---------------------------------------------------------------------------
# 1D very weak ODE study


@dataclass(frozen=True)
class Manufactured:
    """Exact solution ``u`` of ``-u'' = f`` with its data ``f``."""

    u: Callable[[np.ndarray], np.ndarray]
    f: Callable[[np.ndarray], np.ndarray]
    label: str = ""


def default_manufactured(kind: str) -> Manufactured:
    """Smooth solutions meeting the homogeneous conditions of each problem."""
    if kind == "BVP":
        return Manufactured(lambda x: x * (1 - x) * np.exp(x),
                            lambda x: (3 * x + x**2) * np.exp(x), "x(1-x)e^x")
    if kind == "IVP":
        return Manufactured(lambda x: x**2 * np.exp(x),
                            lambda x: -(2 + 4 * x + x**2) * np.exp(x), "x^2 e^x")
    raise ValueError(f"kind must be BVP or IVP, got {kind!r}")


ZERO = Manufactured(np.zeros_like, np.zeros_like, "zero")

PAIRINGS = ("1*/3", "1/3", "2/4")


def _parse_pairing(pair: str) -> tuple[int, bool, int]:
    try:
        trial, test = pair.split("/")
        star = trial.endswith("*")
        return int(trial.rstrip("*")), star, int(test)
    except ValueError as exc:
        raise ValueError(f"pairing must look like '1/3' or '1*/3', got {pair!r}") from exc


@dataclass(frozen=True)
class OdeDiscretization:
    """Square very weak system ``B c = F`` for one pairing and mesh."""

    kind: str
    pairing: str
    n: int
    test: SplineBasis
    trial: SplineBasis | None
    B: np.ndarray
    gram_u: np.ndarray
    gram_v: np.ndarray
    coef: np.ndarray

    def evaluate(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.trial is None:
            return -self.test.matrix(x, 2) @ self.coef
        return self.trial.matrix(x) @ self.coef

    @property
    def beta(self) -> float:
        return infsup_constant(self.B, self.gram_u, self.gram_v)

    @property
    def kappa(self) -> float:
        return condition_number(self.B)


def ode1d_solve(kind: str, pair: str, n: int, data: Manufactured | None = None) -> OdeDiscretization:
    """Very weak discretization of ``-u'' = f`` on ``n`` uniform intervals.

    ``kind='BVP'``: u(0) = u(1) = 0, tests vanish at both ends.
    ``kind='IVP'``: u(0) = u'(0) = 0, tests vanish to first order at 1.
    Order ``r`` means degree ``r - 1``; a starred trial order denotes the
    optimal trial space ``{-v'' : v test}``.
    """
    if kind not in ("BVP", "IVP"):
        raise ValueError(f"kind must be BVP or IVP, got {kind!r}")
    data = default_manufactured(kind) if data is None else data
    r_trial, star, r_test = _parse_pairing(pair)
    bc = BC_DIRICHLET if kind == "BVP" else BC_TERMINAL
    test = SplineBasis(KnotVector.open_uniform(0.0, 1.0, n, r_test - 1), bc)
    gv = assemble_gram_1d(test)
    Q = gv.Q.toarray()
    if star:
        if r_trial != r_test - 2:
            raise ValueError("starred trial order must equal test order minus two")
        trial = None
        B, gram_u = Q, Q
    else:
        trial = SplineBasis(KnotVector.open_uniform(0.0, 1.0, n, r_trial - 1), BC_NONE)
        if trial.dim != test.dim:
            raise ValueError(f"pairing {pair} is not square ({trial.dim} vs {test.dim})")
        B = -assemble_gram_1d(test, trial).N.toarray()
        gram_u = assemble_gram_1d(trial).M.toarray()
    quad = gauss_rule(test.breakpoints, r_test + 2)
    x, w = quad.flat_points, quad.flat_weights
    F = test.matrix(x).T @ (w * data.f(x))
    if star:
        # Q = A^T A with A the weighted samples of the trial functions; going
        # through R of A = QR avoids squaring the condition number.
        qs = gauss_rule(test.breakpoints, r_test)
        A = np.sqrt(qs.flat_weights)[:, None] * test.matrix(qs.flat_points, 2)
        R = sla.qr(A, mode="r")[0][: test.dim]
        coef = sla.solve_triangular(R, sla.solve_triangular(R, F, trans="T"))
    else:
        coef = sla.solve(B, F)
    return OdeDiscretization(kind, pair, n, test, trial, B, gram_u, Q, coef)


def l2_error_1d(approx: Callable, exact: Callable, n: int, npts: int = 8) -> float:
    quad = gauss_rule(np.linspace(0.0, 1.0, n + 1), npts)
    x, w = quad.flat_points, quad.flat_weights
    return float(math.sqrt(np.sum(w * (approx(x) - exact(x)) ** 2)))


def ode1d_study(
    kind: str,
    pairings: Sequence[str] = PAIRINGS,
    refinements: Sequence[int] = (8, 16, 32, 64),
    data: Manufactured | None = None,
) -> StudyResult:
    """L2 error, condition number and inf-sup constant per pairing and mesh."""
    data = default_manufactured(kind) if data is None else data
    out = StudyResult(metadata={"kind": kind, "pairings": tuple(pairings), "solution": data.label})
    for pair in pairings:
        for n in refinements:
            disc = ode1d_solve(kind, pair, n, data)
            dof = disc.B.shape[0]
            out.add(n, dof, f"l2_err[{pair}]", l2_error_1d(disc.evaluate, data.u, n))
            out.add(n, dof, f"kappa[{pair}]", disc.kappa)
            out.add(n, dof, f"beta[{pair}]", disc.beta)
    return out


__all__ = [
    "DENSE_STUDY_CAP",
    "Manufactured",
    "OdeDiscretization",
    "PAIRINGS",
    "SingularGramError",
    "StudyResult",
    "ZERO",
    "condition_number",
    "condition_numbers",
    "default_manufactured",
    "infsup_constant",
    "infsup_optimal",
    "l2_error_1d",
    "ode1d_solve",
    "ode1d_study",
    "power_condition",
    "spectral_equivalence_ratio",
    "spectral_equivalence_study",
]

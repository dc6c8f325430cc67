import numpy as np
import pytest
import scipy.sparse as sp

from stwave.discretization import (
    LowRankMatrix,
    WaveProblem,
    assemble_rhs,
    assemble_space_matrices,
    assemble_time_matrices,
    build_stiffness,
)
from stwave.galerkin import (
    RationalKrylovBasis,
    adaptive_shift,
    galerkin_solve,
    lowrank_residual_norm,
    orth_extend,
    project,
    solve_reduced,
    spectral_bounds,
)
from stwave.mateq import dense_kron_solve


def _system(n_t, n_h, dim=1, case="case1"):
    problem = getattr(WaveProblem, case)(dim)
    tm = assemble_time_matrices(problem.T, n_t)
    sm = assemble_space_matrices(problem, n_h)
    return build_stiffness("optimal", tm, sm), assemble_rhs(problem, tm, sm), tm, sm


@pytest.mark.parametrize("n_t,n_h,dim,case", [(8, 32, 1, "case1"), (8, 16, 1, "case2"),
                                              (6, 8, 2, "case1")])
def test_galerkin_matches_dense(n_t, n_h, dim, case):
    op, G, _, _ = _system(n_t, n_h, dim, case)
    U_ref = dense_kron_solve(op, G)
    rep = galerkin_solve(op, G, tol=1e-10)
    assert rep.converged
    err = np.linalg.norm(rep.dense_solution() - U_ref) / np.linalg.norm(U_ref)
    assert err < 1e-6
    assert rep.basis_dims[0] <= op.shape[0] and rep.basis_dims[1] <= op.shape[1]


def test_galerkin_condition_and_lowrank_residual():
    op, G, tm, sm = _system(8, 16)
    rep = galerkin_solve(op, G, tol=1e-6)
    Vb, Wb = rep.bases
    V, W = Vb.V[:, : rep.Y.shape[0]], Wb.V[:, : rep.Y.shape[1]]
    U = rep.dense_solution()
    R = G.full() - op.apply(U)
    # Galerkin orthogonality of the residual to both bases
    assert np.linalg.norm(V.T @ R @ W) <= 1e-8 * G.norm()
    S_t = tm.N + tm.N.T
    rn = lowrank_residual_norm(G.left, G.right, V, rep.Y, W, sm.M, sm.N, sm.Q, tm.M, S_t, tm.Q)
    assert abs(rn - np.linalg.norm(R)) <= 1e-10 * max(np.linalg.norm(R), G.norm())


def test_three_term_form_equals_optimal_operator(rng):
    op, _, tm, sm = _system(5, 6)
    U = rng.standard_normal(op.shape)
    three = sm.M @ U @ tm.Q + sm.N @ U @ (tm.N + tm.N.T) + sm.Q @ U @ tm.M
    np.testing.assert_allclose(three, op.apply(U), atol=1e-9 * np.abs(three).max())


def test_backward_error_history():
    op, G, _, _ = _system(8, 32)
    rep = galerkin_solve(op, G, tol=1e-5)
    assert rep.converged
    assert rep.backward_errors[-1] <= 1e-5
    assert np.all(np.isfinite(rep.backward_errors))


def test_zero_rhs_and_wrong_flavor():
    op, G, tm, sm = _system(5, 6)
    zero = LowRankMatrix(np.zeros((op.shape[0], 1)), np.zeros((op.shape[1], 1)))
    rep = galerkin_solve(op, zero)
    assert rep.converged and rep.iterations == 0
    with pytest.raises(ValueError):
        galerkin_solve(build_stiffness("general", tm, sm), G)


def test_orth_extend(rng):
    V = orth_extend(np.zeros((10, 0)), rng.standard_normal((10, 3)))
    np.testing.assert_allclose(V.T @ V, np.eye(3), atol=1e-13)
    # a dependent candidate is dropped
    V2 = orth_extend(V, V @ rng.standard_normal(3))
    assert V2.shape[1] == 3
    basis = RationalKrylovBasis.from_seed(rng.standard_normal((10, 2)))
    assert basis.dim == 2 and basis.steps == 0


def test_adaptive_shift():
    assert np.isclose(adaptive_shift((1.0, 100.0)), 10.0)
    s = adaptive_shift((1.0, 100.0), ritz=[1.0, 2.0, 3.0])
    # the criterion pushes the pole away from the Ritz values, toward lmax
    assert s > 50
    with pytest.raises(ValueError):
        adaptive_shift((0.0, 1.0))


def test_spectral_bounds_enclose_spectrum():
    sm = assemble_space_matrices(WaveProblem.smooth(2, 1.0), 24)
    lo, hi = spectral_bounds(sm.Q, sm.M)
    import scipy.linalg as sla

    lam = sla.eigh(sm.Q.toarray(), sm.M.toarray(), eigvals_only=True)
    assert lo <= lam[0] * (1 + 1e-8) and hi >= lam[-1] * (1 - 1e-8)


def test_reduced_solve_paths(rng):
    op, G, tm, sm = _system(6, 8)
    V = np.linalg.qr(rng.standard_normal((sm.size, 5)))[0]
    W = np.linalg.qr(rng.standard_normal((tm.size, 4)))[0]
    red = project(V, W, sm.M, sm.N, sm.Q, tm.M, tm.N + tm.N.T, tm.Q, G.left, G.right)
    Y = solve_reduced(red)
    np.testing.assert_allclose(red.apply(Y), red.rhs(), atol=1e-8 * np.abs(red.rhs()).max())
    import stwave.galerkin as gk

    saved = gk.REDUCED_DENSE_CAP
    gk.REDUCED_DENSE_CAP = 4
    try:
        Y2 = solve_reduced(red)
    finally:
        gk.REDUCED_DENSE_CAP = saved
    np.testing.assert_allclose(Y2, Y, atol=1e-7 * np.abs(Y).max())
    assert isinstance(sm.M, sp.csr_matrix)

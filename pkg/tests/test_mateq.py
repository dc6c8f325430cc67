import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stwave.discretization import (
    LowRankMatrix,
    WaveProblem,
    assemble_space_matrices,
    assemble_time_matrices,
    build_stiffness,
)
from stwave.mateq import (
    IllPosedError,
    ShiftedSylvesterSolver,
    SymSylvesterSolver,
    decompose_pencil,
    dense_kron_solve,
    solve_shifted_sylvester,
    solve_sym_sylvester,
)


def _mats(n_t=6, n_h=7, dim=1, c=0.5):
    problem = WaveProblem.smooth(dim, c)
    return assemble_time_matrices(1.0, n_t), assemble_space_matrices(problem, n_h)


def test_pencil_decomposition():
    tm, _ = _mats()
    pen = decompose_pencil(tm.Q, tm.M)
    assert pen.residual() < 1e-12
    np.testing.assert_allclose(pen.X.T @ tm.M @ pen.X, np.eye(tm.size), atol=1e-10)
    np.testing.assert_allclose(pen.Xinv @ pen.X, np.eye(tm.size), atol=1e-9)


@given(st.integers(3, 8), st.integers(2, 9), st.integers(0, 2**31 - 1))
def test_sym_sylvester_matches_dense(n_t, n_h, seed):
    tm, sm = _mats(n_t, n_h)
    R = np.random.default_rng(seed).standard_normal((sm.size, tm.size))
    Z = solve_sym_sylvester(sm.M, sm.Q, tm.M, tm.Q, R)
    A = np.kron(tm.Q, sm.M.toarray()) + np.kron(tm.M, sm.Q.toarray())
    z = np.linalg.solve(A, R.ravel(order="F"))
    np.testing.assert_allclose(Z.ravel(order="F"), z, rtol=1e-7, atol=1e-9 * np.abs(z).max())


def test_sym_sylvester_low_rank_input(rng):
    tm, sm = _mats()
    solver = SymSylvesterSolver(sm.M, sm.Q, tm.M, tm.Q)
    F = LowRankMatrix(rng.standard_normal((sm.size, 2)), rng.standard_normal((tm.size, 2)))
    np.testing.assert_allclose(solver(F), solver(F.full()), atol=1e-12)
    assert solver.residual(solver(F), F) < 1e-10


@pytest.mark.parametrize("dim", [1, 2])
def test_shifted_sylvester_matches_dense(dim, rng):
    tm, sm = _mats(5, 4, dim=dim)
    R = rng.standard_normal((sm.size, tm.size))
    W = solve_shifted_sylvester(sm.N, sm.M, tm.N, tm.M, R)
    Mh, Nh = sm.M.toarray(), sm.N.toarray()
    Tt = np.linalg.solve(tm.M, tm.N)
    A = np.kron(Tt.T, np.eye(sm.size)) + np.kron(np.eye(tm.size), np.linalg.solve(Mh, Nh))
    w = np.linalg.solve(A, R.ravel(order="F"))
    np.testing.assert_allclose(W.ravel(order="F"), w, rtol=1e-6, atol=1e-8 * np.abs(w).max())


def test_shifted_sylvester_custom_time_operator(rng):
    tm, sm = _mats(5, 6)
    T = rng.standard_normal((tm.size, tm.size)) + 5 * np.eye(tm.size)
    solver = ShiftedSylvesterSolver(sm.N, sm.M, time_operator=T)
    R = rng.standard_normal((sm.size, tm.size))
    assert solver.residual(solver(R), R) < 1e-10


def test_shifted_sylvester_singular():
    _, sm = _mats(5, 6)
    lam = np.linalg.eigvals(np.linalg.solve(sm.M.toarray(), sm.N.toarray())).real
    T = -lam[0] * np.eye(3)
    with pytest.raises(IllPosedError):
        ShiftedSylvesterSolver(sm.N, sm.M, time_operator=T)


def test_dense_oracle_against_numpy(rng):
    tm, sm = _mats(4, 5)
    op = build_stiffness("optimal", tm, sm)
    G = rng.standard_normal(op.shape)
    U = dense_kron_solve(op, G)
    np.testing.assert_allclose(op.apply(U), G, atol=1e-8 * np.abs(G).max())


def test_dense_oracle_cap():
    tm, sm = _mats(4, 5)
    op = build_stiffness("optimal", tm, sm)
    import stwave.mateq as mq

    saved = mq.DENSE_KRON_CAP
    mq.DENSE_KRON_CAP = 10
    try:
        with pytest.raises(ValueError):
            dense_kron_solve(op, np.zeros(op.shape))
    finally:
        mq.DENSE_KRON_CAP = saved


def test_space_cap():
    tm, sm = _mats(4, 5)
    with pytest.raises(ValueError):
        SymSylvesterSolver(sm.M, sm.Q, tm.M, tm.Q, space_cap=3)

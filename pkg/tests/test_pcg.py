import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stwave.discretization import (
    LowRankMatrix,
    WaveProblem,
    assemble_rhs,
    assemble_space_matrices,
    assemble_time_matrices,
    build_stiffness,
)
from stwave.mateq import dense_kron_solve
from stwave.pcg import (
    KmkPreconditioner,
    PcgConfig,
    SylvesterPreconditioner,
    backward_error,
    matrix_pcg,
    precond_kmk,
    precond_sylvester,
    rk_sylvester,
    truncate_rank,
)


def _system(n_t=6, n_h=8, dim=1, case="case1"):
    problem = getattr(WaveProblem, case)(dim)
    tm = assemble_time_matrices(problem.T, n_t)
    sm = assemble_space_matrices(problem, n_h)
    return build_stiffness("optimal", tm, sm), assemble_rhs(problem, tm, sm), tm, sm


def test_config_validation():
    for bad in ({"tol": 0}, {"preconditioner": "ilu"}, {"truncation_rank": 0},
                {"kmk_orientation": "x"}, {"max_iter": 0}):
        with pytest.raises(ValueError):
            PcgConfig(**bad)


@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_truncate_rank_is_best_approximation(r, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((9, 7))
    s = np.linalg.svd(X, compute_uv=False)
    err = np.linalg.norm(X - truncate_rank(X, r).full())
    assert np.isclose(err, np.sqrt(np.sum(s[r:] ** 2)))
    L = LowRankMatrix(rng.standard_normal((9, 5)), rng.standard_normal((7, 5)))
    np.testing.assert_allclose(truncate_rank(L, r).full(), truncate_rank(L.full(), r).full(),
                               atol=1e-10)


def test_backward_error_formula(rng):
    op, G, tm, sm = _system(4, 5)
    U = rng.standard_normal(op.shape)
    R = G.full() - op.apply(U)
    Mh, Nh, Qh = (np.linalg.norm(m.toarray()) for m in (sm.M, sm.N, sm.Q))
    Mt, Nt, Qt = (np.linalg.norm(m) for m in (tm.M, tm.N, tm.Q))
    expected = np.linalg.norm(R) / (np.linalg.norm(G.full()) + np.linalg.norm(U) * (
        Mh * Qt + Qh * Mt + 2 * Nh * Nt))
    got = backward_error(np.linalg.norm(R), np.linalg.norm(G.full()), np.linalg.norm(U),
                         op.norm_scale())
    assert abs(got - expected) <= 1e-12 * expected


def test_sylvester_preconditioner_is_exact_inverse(rng):
    op, _, tm, sm = _system(5, 6)
    P = np.kron(tm.Q, sm.M.toarray()) + np.kron(tm.M, sm.Q.toarray())
    R = rng.standard_normal(op.shape)
    z = np.linalg.solve(P, R.ravel(order="F"))
    np.testing.assert_allclose(precond_sylvester(op, R).ravel(order="F"), z, rtol=1e-8,
                               atol=1e-10 * np.abs(z).max())


@pytest.mark.parametrize("orientation", ["psd", "literal"])
def test_kmk_preconditioner_against_dense_oracle(orientation, rng):
    """Compare with K^{-1} M K^{-T} formed by dense solves with K."""
    op, _, tm, sm = _system(5, 6)
    Mh, Nh = sm.M.toarray(), sm.N.toarray()
    Nt = tm.N.T if orientation == "psd" else tm.N
    K = np.kron(Nt, Mh) + np.kron(tm.M, Nh)
    M = np.kron(tm.M, Mh)
    R = rng.standard_normal(op.shape)
    z = np.linalg.solve(K, M @ np.linalg.solve(K.T, R.ravel(order="F")))
    cfg = PcgConfig(preconditioner="kmk", kmk_orientation=orientation)
    got = precond_kmk(op, R, cfg).ravel(order="F")
    np.testing.assert_allclose(got, z, rtol=1e-6, atol=1e-9 * np.abs(z).max())


def test_psd_kmk_spectrum_bounded_below():
    op, _, tm, sm = _system(6, 8)
    Mh, Nh = sm.M.toarray(), sm.N.toarray()
    K = np.kron(tm.N.T, Mh) + np.kron(tm.M, Nh)
    P = K.T @ np.linalg.solve(np.kron(tm.M, Mh), K)
    lam = np.linalg.eigvals(np.linalg.solve(P, op.dense())).real
    assert lam.min() > 1 - 1e-6


@pytest.mark.parametrize("pre", ["none", "sylvester", "kmk"])
def test_pcg_matches_dense(pre):
    op, G, _, _ = _system(6, 8)
    U_ref = dense_kron_solve(op, G)
    rep = matrix_pcg(op, G, PcgConfig(tol=1e-11, max_iter=3000, preconditioner=pre))
    assert rep.converged
    assert rep.backward_error <= 1e-11
    assert np.all(np.isfinite(rep.backward_errors))
    err = np.linalg.norm(rep.U - U_ref) / np.linalg.norm(U_ref)
    assert err < 1e-5


def test_pcg_zero_rhs_and_iteration_cap():
    op, G, _, _ = _system(5, 6)
    rep = matrix_pcg(op, np.zeros(op.shape))
    assert rep.converged and rep.iterations == 0
    rep = matrix_pcg(op, G, PcgConfig(tol=1e-14, max_iter=2))
    assert not rep.converged and rep.iterations == 2


def test_pcg_callback_and_history():
    op, G, _, _ = _system(5, 6)
    seen = []
    rep = matrix_pcg(op, G, PcgConfig(tol=1e-8, preconditioner="sylvester"),
                     callback=lambda k, X: seen.append(k))
    assert seen == list(range(1, rep.iterations + 1))
    assert len(rep.backward_errors) == rep.iterations + 1


def test_rk_sylvester_against_dense(rng):
    _, sm = None, assemble_space_matrices(WaveProblem.smooth(2, 0.5), 10)
    tm = assemble_time_matrices(1.0, 5)
    T = np.linalg.solve(tm.M, tm.Q).T
    F = LowRankMatrix(rng.standard_normal((sm.size, 2)), rng.standard_normal((tm.size, 2)))
    Z = rk_sylvester(sm.Q, sm.M, T, F, tol=1e-10)
    A = np.kron(np.eye(tm.size), sm.Q.toarray()) + np.kron(T.T, sm.M.toarray())
    z = np.linalg.solve(A, F.full().ravel(order="F"))
    np.testing.assert_allclose(Z.ravel(order="F"), z, rtol=1e-6, atol=1e-8 * np.abs(z).max())


@pytest.mark.parametrize("cls", [SylvesterPreconditioner, KmkPreconditioner])
def test_large_space_path_approximates_direct(cls, rng):
    op, G, _, _ = _system(5, 8, dim=2)
    R = truncate_rank(rng.standard_normal(op.shape), 2).full()
    direct = cls(op, PcgConfig(preconditioner="kmk"))(R)

    def lowrank(rank):
        cfg = PcgConfig(preconditioner="kmk", large_space_threshold=10, truncation_rank=rank,
                        inner_tol=1e-10)
        return np.linalg.norm(cls(op, cfg)(R) - direct) / np.linalg.norm(direct)

    # no truncation loss once the rank reaches the temporal dimension
    assert lowrank(5) < 1e-7
    assert lowrank(4) < 1e-3


def test_pcg_large_space_path_converges():
    op, G, _, _ = _system(5, 8, dim=2)
    U_ref = dense_kron_solve(op, G)
    rep = matrix_pcg(op, G, PcgConfig(tol=1e-9, preconditioner="sylvester",
                                      large_space_threshold=10))
    assert rep.converged
    assert np.linalg.norm(rep.U - U_ref) / np.linalg.norm(U_ref) < 1e-4

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stwave.diagnostics import (
    PAIRINGS,
    ZERO,
    SingularGramError,
    StudyResult,
    condition_number,
    condition_numbers,
    infsup_constant,
    infsup_optimal,
    ode1d_solve,
    ode1d_study,
    power_condition,
    spectral_equivalence_ratio,
    spectral_equivalence_study,
)
from stwave.discretization import assemble_time_matrices


def test_infsup_trivial():
    assert np.isclose(infsup_constant(np.eye(4), np.eye(4), np.eye(4)), 1.0)
    assert np.isclose(infsup_constant(2 * np.eye(3), np.eye(3), np.eye(3)), 2.0)


def test_infsup_rectangular_and_singular():
    B = np.array([[1.0, 0.0], [0.0, 0.5], [0.0, 0.0]])
    assert np.isclose(infsup_constant(B, np.eye(2), np.eye(3)), 0.5)
    with pytest.raises(SingularGramError):
        infsup_constant(np.eye(2), np.eye(2), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        infsup_constant(np.eye(2), np.eye(3), np.eye(2))


@given(st.integers(0, 2**31 - 1))
def test_infsup_invariant_under_test_scaling(seed):
    rng = np.random.default_rng(seed)
    n = 6
    B = rng.standard_normal((n, n)) + 3 * np.eye(n)
    A = rng.standard_normal((n, n))
    Gv = A @ A.T + n * np.eye(n)
    C = rng.standard_normal((n, n))
    Gu = C @ C.T + n * np.eye(n)
    D = np.diag(rng.uniform(0.1, 10.0, n))
    b1 = infsup_constant(B, Gu, Gv)
    b2 = infsup_constant(D @ B, Gu, D @ Gv @ D)
    assert abs(b1 - b2) <= 1e-10 * b1


@pytest.mark.parametrize("n_t,n_h,dim", [(4, 4, 1), (8, 8, 1), (8, 16, 1), (4, 4, 3)])
def test_optimal_pairing_infsup_is_one(n_t, n_h, dim):
    assert abs(infsup_optimal(1.0, n_t, n_h, dim, 0.2) - 1.0) < 1e-8


@pytest.mark.parametrize("kind", ["BVP", "IVP"])
@pytest.mark.parametrize("pair", PAIRINGS)
def test_ode_pairings_infsup_one(kind, pair):
    for n in (4, 8):
        assert abs(ode1d_solve(kind, pair, n).beta - 1.0) < 1e-8


@pytest.mark.parametrize("kind", ["BVP", "IVP"])
def test_ode_star_and_plain_coincide(kind):
    x = np.linspace(0, 1, 1001)
    a = ode1d_solve(kind, "1*/3", 32).evaluate(x)
    b = ode1d_solve(kind, "1/3", 32).evaluate(x)
    assert np.abs(a - b).max() < 1e-10


def test_ode_convergence_orders():
    res = ode1d_study("IVP", refinements=(8, 16, 32))
    assert abs(res.slope("l2_err[1/3]") - 1.0) < 0.1
    assert abs(res.slope("l2_err[2/4]") - 2.0) < 0.1
    assert res.slope("l2_err[2/4]") > res.slope("l2_err[1/3]")


def test_ode_zero_forcing():
    d = ode1d_solve("BVP", "2/4", 8, ZERO)
    assert np.all(d.coef == 0)
    res = ode1d_study("BVP", ("1/3",), (4, 8), ZERO)
    assert np.all(res.values("l2_err[1/3]") == 0)


def test_ode_bad_inputs():
    with pytest.raises(ValueError):
        ode1d_solve("PDE", "1/3", 4)
    with pytest.raises(ValueError):
        ode1d_solve("BVP", "1/4", 4)
    with pytest.raises(ValueError):
        ode1d_solve("BVP", "2*/3", 4)


def test_condition_number_trivial_and_power_check():
    assert condition_number(np.array([[3.0]])) == 1.0
    tm = assemble_time_matrices(1.0, 12)
    for A in (tm.M, tm.Q, tm.N):
        k1, k2 = condition_number(A), power_condition(A)
        assert abs(k1 - k2) <= 1e-6 * k1


def test_conditioning_slopes():
    res = condition_numbers((8, 16, 32, 64))
    assert abs(res.slope("kappa_M_h")) < 0.3
    assert abs(res.slope("kappa_M_t")) < 0.3
    assert abs(res.slope("kappa_N_h") + 2) < 0.3
    assert abs(res.slope("kappa_Q_h") + 4) < 0.4
    assert abs(res.slope("kappa_Q_t") + 4) < 0.4


def test_spectral_equivalence_trivial():
    I = np.eye(3)
    assert np.allclose(spectral_equivalence_ratio(I, I, I), (1.0, 1.0))
    assert np.allclose(spectral_equivalence_ratio(I, I, I, dps=30), (1.0, 1.0))


def test_spectral_equivalence_extended_precision_agrees_when_resolvable():
    tm = assemble_time_matrices(1.0, 6)
    lo, hi = spectral_equivalence_ratio(tm.Q, tm.N, tm.M)
    lo_x, hi_x = spectral_equivalence_ratio(tm.Q, tm.N, tm.M, dps=50)
    assert abs(hi - hi_x) <= 1e-10 * hi_x
    assert abs(lo - lo_x) <= 1e-2 * lo_x


def test_spectral_equivalence_dichotomy():
    res = spectral_equivalence_study((8, 16, 32))
    space = res.values("space_min")
    assert space.max() / space.min() < 2
    time_min = res.values("time_min")
    assert np.all(np.diff(time_min) < 0)


def test_study_result_invariants():
    res = StudyResult()
    res.add(4, 4, "a", 1.0)
    with pytest.raises(ValueError):
        res.add(4, 4, "a", 2.0)
    with pytest.raises(ValueError):
        res.add(8, 8, "a", float("inf"))
    with pytest.raises(ValueError):
        res.slope("a")

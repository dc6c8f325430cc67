import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stwave import _pykernels
from stwave.kernels import BACKEND, basis_funs_batch
from stwave.splines import (
    BC_DIRICHLET,
    BC_NONE,
    BC_TERMINAL,
    KnotVector,
    SplineBasis,
    assemble_gram_1d,
    eval_basis,
    gauss_rule,
    make_spatial_test_basis_1d,
    make_temporal_test_basis,
)

try:
    from stwave import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None


def _open(n, degree, bc=BC_NONE, a=0.0, b=1.0):
    return SplineBasis(KnotVector.open_uniform(a, b, n, degree), bc)


def test_backend_reported():
    assert BACKEND in ("cython", "python")


@given(st.integers(1, 12), st.integers(0, 4), st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_partition_of_unity(n, degree, xs):
    basis = _open(n, degree)
    vals = basis.matrix(np.array(xs))
    np.testing.assert_allclose(vals.sum(axis=1), 1.0, atol=1e-13)
    assert np.all(vals >= -1e-15)


@given(st.integers(2, 10), st.integers(1, 4), st.floats(0.01, 0.99))
def test_derivatives_match_finite_differences(n, degree, x):
    basis = _open(n, degree)
    h = 1e-6
    # stay inside one knot span so the difference quotient is smooth
    bp = basis.breakpoints
    k = np.searchsorted(bp, x, side="right") - 1
    x = float(np.clip(x, bp[k] + 2 * h, bp[k + 1] - 2 * h)) if bp[k + 1] - bp[k] > 4 * h else x
    fd = (basis.matrix(np.array([x + h])) - basis.matrix(np.array([x - h]))) / (2 * h)
    np.testing.assert_allclose(basis.matrix(np.array([x]), 1), fd, atol=1e-6 * max(1, n))


@pytest.mark.skipif(_ckernels is None, reason="compiled extension not built")
@given(st.integers(1, 16), st.integers(0, 4), st.integers(0, 3),
       st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_backends_agree(n, degree, nders, xs):
    kn = KnotVector.open_uniform(0.0, 1.0, n, degree).knots
    x = np.array(xs)
    s1, d1 = _pykernels.basis_funs_batch(kn, degree, x, nders)
    s2, d2 = _ckernels.basis_funs_batch(kn, degree, x, nders)
    np.testing.assert_array_equal(s1, s2)
    np.testing.assert_allclose(d1, d2, rtol=1e-13, atol=1e-13)


def test_dimensions_with_boundary_conditions():
    assert make_temporal_test_basis(1.0, 8).dim == 8
    assert make_spatial_test_basis_1d(n_h=8).dim == 8
    assert _open(6, 3, BC_DIRICHLET).dim == 7
    assert _open(6, 3, BC_TERMINAL).dim == 7


def test_temporal_basis_terminal_conditions():
    basis = make_temporal_test_basis(2.0, 6)
    np.testing.assert_allclose(eval_basis(basis, 2.0), 0.0, atol=1e-14)
    np.testing.assert_allclose(eval_basis(basis, 2.0, 1), 0.0, atol=1e-12)
    # the retained boundary function at t = 0 has zero value but nonzero slope
    v0 = eval_basis(basis, 0.0)
    assert np.count_nonzero(np.abs(v0) > 1e-14) == 1


def test_spatial_basis_dirichlet():
    basis = make_spatial_test_basis_1d(n_h=5)
    np.testing.assert_allclose(eval_basis(basis, 0.0), 0.0, atol=1e-14)
    np.testing.assert_allclose(eval_basis(basis, 1.0), 0.0, atol=1e-14)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        make_temporal_test_basis(1.0, 2)
    with pytest.raises(ValueError):
        make_spatial_test_basis_1d(h=0.3)
    with pytest.raises(ValueError):
        KnotVector(np.array([0.0, 0.0, 1.0]), np.array([1, 1, 1]), 1)
    with pytest.raises(ValueError):
        eval_basis(make_spatial_test_basis_1d(n_h=4), 1.5)


def test_gauss_rule_exactness():
    q = gauss_rule(np.linspace(0, 2, 4), 3)
    for p in range(6):
        assert np.isclose(np.sum(q.flat_weights * q.flat_points**p), 2 ** (p + 1) / (p + 1))


def _gram_oracle(basis, da, db):
    """Dense high-order quadrature, independent of the sparse assembly."""
    q = gauss_rule(basis.breakpoints, 8, subdivide=3)
    A = basis.matrix(q.flat_points, da)
    B = basis.matrix(q.flat_points, db)
    return A.T @ (q.flat_weights[:, None] * B)


@pytest.mark.parametrize("basis", [make_temporal_test_basis(1.5, 7), make_spatial_test_basis_1d(n_h=9)])
def test_gram_matrices_against_oracle(basis):
    g = assemble_gram_1d(basis)
    np.testing.assert_allclose(g.M.toarray(), _gram_oracle(basis, 0, 0), atol=1e-14)
    np.testing.assert_allclose(g.N.toarray(), _gram_oracle(basis, 2, 0), atol=1e-11)
    np.testing.assert_allclose(g.Q.toarray(), _gram_oracle(basis, 2, 2), atol=1e-9)
    np.testing.assert_allclose(g.K.toarray(), _gram_oracle(basis, 1, 1), atol=1e-11)


def test_uniform_mass_matrix_interior_row():
    # interior quadratic B-spline mass row on unit spacing: 1/120, 13/60, 11/20
    basis = make_spatial_test_basis_1d(n_h=10)
    row = assemble_gram_1d(basis).M.toarray()[4] * 10
    np.testing.assert_allclose(row[2:7], [1 / 120, 13 / 60, 11 / 20, 13 / 60, 1 / 120], atol=1e-14)


def test_dirichlet_identities():
    g = assemble_gram_1d(make_spatial_test_basis_1d(n_h=8))
    # (phi'', phi) = -(phi', phi') when phi vanishes on the boundary
    np.testing.assert_allclose(g.N.toarray(), -g.K.toarray(), atol=1e-12)
    for mat in (g.M, g.K, g.Q):
        np.testing.assert_allclose(mat.toarray(), mat.toarray().T, atol=1e-12)
        assert np.linalg.eigvalsh(mat.toarray()).min() > 0


def test_cross_gram_requires_same_mesh():
    with pytest.raises(ValueError):
        assemble_gram_1d(_open(4, 2), _open(5, 1))


def test_basis_funs_batch_shapes():
    kn = KnotVector.open_uniform(0, 1, 4, 2).knots
    spans, ders = basis_funs_batch(kn, 2, np.array([0.0, 0.5, 1.0]), 2)
    assert spans.shape == (3,)
    assert ders.shape == (3, 3, 3)

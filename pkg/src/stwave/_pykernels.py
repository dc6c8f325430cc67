"""Pure numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` one to one and are used whenever the compiled
extension is unavailable (or ``STWAVE_PURE_PYTHON=1`` is set).
"""
import numpy as np


def find_spans(knots, degree, x):
    """Knot span index of every point, right-continuous at interior knots.

    The right end point is assigned to the last non-degenerate span.
    """
    knots = np.asarray(knots, dtype=float)
    x = np.asarray(x, dtype=float)
    nbasis = len(knots) - degree - 1
    spans = np.searchsorted(knots, x, side="right") - 1
    return np.clip(spans, degree, nbasis - 1).astype(np.int64)


def basis_funs_batch(knots, degree, x, nders):
    """Values and derivatives of the ``degree + 1`` active B-splines.

    Vectorized version of Piegl & Tiller, Algorithm A2.3.

    Returns
    -------
    spans : (npts,) int64
    ders : (npts, nders + 1, degree + 1) float64
        ``ders[q, k, j]`` is the k-th derivative of basis ``spans[q] - degree + j``.
    """
    knots = np.ascontiguousarray(knots, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = int(degree)
    npts = x.shape[0]
    spans = find_spans(knots, p, x)
    out = np.zeros((npts, nders + 1, p + 1))
    n = min(nders, p)

    ndu = np.zeros((p + 1, p + 1, npts))
    left = np.zeros((p + 1, npts))
    right = np.zeros((p + 1, npts))
    ndu[0, 0] = 1.0
    for j in range(1, p + 1):
        left[j] = x - knots[spans + 1 - j]
        right[j] = knots[spans + j] - x
        saved = np.zeros(npts)
        for r in range(j):
            ndu[j, r] = right[r + 1] + left[j - r]
            temp = ndu[r, j - 1] / ndu[j, r]
            ndu[r, j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    for j in range(p + 1):
        out[:, 0, j] = ndu[j, p]

    a = np.zeros((2, p + 1, npts))
    for r in range(p + 1):
        s1, s2 = 0, 1
        a[:] = 0.0
        a[0, 0] = 1.0
        for k in range(1, n + 1):
            d = np.zeros(npts)
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2, 0] = a[s1, 0] / ndu[pk + 1, rk]
                d = a[s2, 0] * ndu[rk, pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2, j] = (a[s1, j] - a[s1, j - 1]) / ndu[pk + 1, rk + j]
                d = d + a[s2, j] * ndu[rk + j, pk]
            if r <= pk:
                a[s2, k] = -a[s1, k - 1] / ndu[pk + 1, r]
                d = d + a[s2, k] * ndu[r, pk]
            out[:, k, r] = d
            s1, s2 = s2, s1

    fac = float(p)
    for k in range(1, n + 1):
        out[:, k, :] *= fac
        fac *= p - k
    return spans, out


def trial_expansion_points(
    U, t_spans, t_first, t_second, imap_t, s_spans, s_val, s_dd, imap_s, n_axis, lap_coef
):
    """Pointwise value of ``sum_{k,i} U[i,k] (a_k(t) phi_i(x) + b_k(t) L phi_i(x))``.

    ``L phi_i = lap_coef * sum_a phi''_{i_a} prod_{b != a} phi_{i_b}`` for tensor
    product spatial functions. Arrays follow the layout of ``basis_funs_batch``:
    ``t_first``/``t_second`` are (npts, pt+1), ``s_val``/``s_dd`` are
    (npts, d, ps+1), spans index the raw (pre-boundary-condition) basis and the
    ``imap`` arrays send raw indices to retained ones (-1 when removed).
    """
    U = np.asarray(U, dtype=float)
    npts, d, ns = s_val.shape
    nt = t_first.shape[1]
    pt = nt - 1
    ps = ns - 1
    out = np.zeros(npts)
    tidx = imap_t[t_spans[:, None] - pt + np.arange(nt)[None, :]]
    sidx = imap_s[s_spans[:, :, None] - ps + np.arange(ns)[None, None, :]]

    for combo in np.ndindex(*(ns,) * d):
        flat = np.zeros(npts, dtype=np.int64)
        valid = np.ones(npts, dtype=bool)
        phi = np.ones(npts)
        lap = np.zeros(npts)
        for a, ja in enumerate(combo):
            ia = sidx[:, a, ja]
            valid &= ia >= 0
            flat = flat * n_axis + np.where(ia >= 0, ia, 0)
            lap = lap * s_val[:, a, ja] + phi * s_dd[:, a, ja]
            phi = phi * s_val[:, a, ja]
        lap *= lap_coef
        for jt in range(nt):
            k = tidx[:, jt]
            ok = valid & (k >= 0)
            if not ok.any():
                continue
            coef = U[flat[ok], k[ok]]
            out[ok] += coef * (t_first[ok, jt] * phi[ok] + t_second[ok, jt] * lap[ok])
    return out

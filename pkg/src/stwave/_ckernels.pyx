# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free

cnp.import_array()


cdef inline Py_ssize_t _find_span(const double[::1] knots, int p, Py_ssize_t nbasis, double x) noexcept nogil:
    # largest i in [p, nbasis-1] with knots[i] <= x (right-continuous)
    cdef Py_ssize_t lo = p, hi = nbasis, mid
    if x >= knots[nbasis]:
        return nbasis - 1
    if x < knots[p]:
        return p
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if x < knots[mid]:
            hi = mid
        else:
            lo = mid
    return lo


def find_spans(knots, int degree, x):
    cdef const double[::1] kv = np.ascontiguousarray(knots, dtype=np.float64)
    cdef const double[::1] xv = np.ascontiguousarray(np.atleast_1d(x), dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], q
    cdef Py_ssize_t nbasis = kv.shape[0] - degree - 1
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] ov = out
    with nogil:
        for q in range(n):
            ov[q] = _find_span(kv, degree, nbasis, xv[q])
    return out


cdef void _ders(const double[::1] U, int p, Py_ssize_t i, double u, int n,
                double* ndu, double* a, double* left, double* right,
                double[:, :, ::1] out, Py_ssize_t q) noexcept nogil:
    # Piegl & Tiller A2.3; ndu and a are (p+1)x(p+1) / 2x(p+1) row-major scratch
    cdef int j, r, k, s1, s2, rk, pk, j1, j2, tmp
    cdef double saved, temp, d, fac
    cdef int P = p + 1
    ndu[0] = 1.0
    for j in range(1, p + 1):
        left[j] = u - U[i + 1 - j]
        right[j] = U[i + j] - u
        saved = 0.0
        for r in range(j):
            ndu[j * P + r] = right[r + 1] + left[j - r]
            temp = ndu[r * P + j - 1] / ndu[j * P + r]
            ndu[r * P + j] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j * P + j] = saved
    for j in range(p + 1):
        out[q, 0, j] = ndu[j * P + p]
    for r in range(p + 1):
        s1 = 0
        s2 = 1
        for j in range(2 * P):
            a[j] = 0.0
        a[0] = 1.0
        for k in range(1, n + 1):
            d = 0.0
            rk = r - k
            pk = p - k
            if r >= k:
                a[s2 * P] = a[s1 * P] / ndu[(pk + 1) * P + rk]
                d = a[s2 * P] * ndu[rk * P + pk]
            j1 = 1 if rk >= -1 else -rk
            j2 = k - 1 if r - 1 <= pk else p - r
            for j in range(j1, j2 + 1):
                a[s2 * P + j] = (a[s1 * P + j] - a[s1 * P + j - 1]) / ndu[(pk + 1) * P + rk + j]
                d += a[s2 * P + j] * ndu[(rk + j) * P + pk]
            if r <= pk:
                a[s2 * P + k] = -a[s1 * P + k - 1] / ndu[(pk + 1) * P + r]
                d += a[s2 * P + k] * ndu[r * P + pk]
            out[q, k, r] = d
            tmp = s1
            s1 = s2
            s2 = tmp
    fac = p
    for k in range(1, n + 1):
        for j in range(p + 1):
            out[q, k, j] *= fac
        fac *= p - k


def basis_funs_batch(knots, int degree, x, int nders):
    cdef const double[::1] kv = np.ascontiguousarray(knots, dtype=np.float64)
    cdef const double[::1] xv = np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=np.float64)))
    cdef Py_ssize_t npts = xv.shape[0], q
    cdef int p = degree
    cdef int n = nders if nders < degree else degree
    cdef Py_ssize_t nbasis = kv.shape[0] - p - 1
    spans = np.empty(npts, dtype=np.int64)
    out = np.zeros((npts, nders + 1, p + 1), dtype=np.float64)
    cdef cnp.int64_t[::1] sv = spans
    cdef double[:, :, ::1] ov = out
    cdef double* ndu = <double*> malloc((p + 1) * (p + 1) * sizeof(double))
    cdef double* a = <double*> malloc(2 * (p + 1) * sizeof(double))
    cdef double* left = <double*> malloc((p + 1) * sizeof(double))
    cdef double* right = <double*> malloc((p + 1) * sizeof(double))
    try:
        with nogil:
            for q in range(npts):
                sv[q] = _find_span(kv, p, nbasis, xv[q])
                _ders(kv, p, sv[q], xv[q], n, ndu, a, left, right, ov, q)
    finally:
        free(ndu)
        free(a)
        free(left)
        free(right)
    return spans, out


def trial_expansion_points(U, t_spans, t_first, t_second, imap_t,
                           s_spans, s_val, s_dd, imap_s, Py_ssize_t n_axis, double lap_coef):
    cdef const double[:, :] Uv = np.asarray(U, dtype=np.float64)
    cdef const cnp.int64_t[::1] tsp = np.ascontiguousarray(t_spans, dtype=np.int64)
    cdef const double[:, ::1] ta = np.ascontiguousarray(t_first, dtype=np.float64)
    cdef const double[:, ::1] tb = np.ascontiguousarray(t_second, dtype=np.float64)
    cdef const cnp.int64_t[::1] imt = np.ascontiguousarray(imap_t, dtype=np.int64)
    cdef const cnp.int64_t[:, ::1] ssp = np.ascontiguousarray(s_spans, dtype=np.int64)
    cdef const double[:, :, ::1] sv = np.ascontiguousarray(s_val, dtype=np.float64)
    cdef const double[:, :, ::1] sd = np.ascontiguousarray(s_dd, dtype=np.float64)
    cdef const cnp.int64_t[::1] ims = np.ascontiguousarray(imap_s, dtype=np.int64)
    cdef Py_ssize_t npts = sv.shape[0], q, m, a, jt, ncombo, rem, flat, idx, k
    cdef int d = sv.shape[1], ns = sv.shape[2], nt = ta.shape[1]
    cdef int pt = nt - 1, ps = ns - 1, ja
    cdef double phi, lap, acc, va, da
    cdef bint valid
    out = np.zeros(npts, dtype=np.float64)
    cdef double[::1] ov = out
    ncombo = 1
    for a in range(d):
        ncombo *= ns
    with nogil:
        for q in range(npts):
            acc = 0.0
            for m in range(ncombo):
                rem = m
                flat = 0
                phi = 1.0
                lap = 0.0
                valid = True
                # axis 0 carries the most significant digit of m
                k = ncombo
                for a in range(d):
                    k = k // ns
                    ja = (rem // k) % ns
                    idx = ims[ssp[q, a] - ps + ja]
                    if idx < 0:
                        valid = False
                        break
                    flat = flat * n_axis + idx
                    va = sv[q, a, ja]
                    da = sd[q, a, ja]
                    lap = lap * va + phi * da
                    phi = phi * va
                if not valid:
                    continue
                lap *= lap_coef
                for jt in range(nt):
                    k = imt[tsp[q] - pt + jt]
                    if k < 0:
                        continue
                    acc += Uv[flat, k] * (ta[q, jt] * phi + tb[q, jt] * lap)
            ov[q] = acc
    return out

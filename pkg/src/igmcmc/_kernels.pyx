# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled Sturm-sequence kernels for symmetric tridiagonal matrices.

Every routine takes the diagonal and the *squared* off-diagonal, which is
all a Sturm count needs.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt

cnp.import_array()

cdef double TINY = 1e-300


cdef inline Py_ssize_t _count_above(const double* diag, const double* off2,
                                    Py_ssize_t K, double t) noexcept nogil:
    # Number of eigenvalues strictly greater than t (inertia of tI - A).
    cdef Py_ssize_t j, cnt = 0
    cdef double q = t - diag[0]
    if q < 0:
        cnt += 1
    for j in range(1, K):
        if q == 0.0:
            q = TINY
        q = (t - diag[j]) - off2[j - 1] / q
        if q < 0:
            cnt += 1
    return cnt


cdef inline void _count_above4(const double* d0, const double* d1, const double* d2,
                               const double* d3, const double* off2, Py_ssize_t K, double t,
                               cnp.int64_t* out) noexcept nogil:
    # four independent recurrences interleaved to hide division latency
    cdef Py_ssize_t j
    cdef cnp.int64_t c0 = 0, c1 = 0, c2 = 0, c3 = 0
    cdef double q0 = t - d0[0], q1 = t - d1[0], q2 = t - d2[0], q3 = t - d3[0]
    cdef double e
    c0 += q0 < 0
    c1 += q1 < 0
    c2 += q2 < 0
    c3 += q3 < 0
    for j in range(1, K):
        e = off2[j - 1]
        if q0 == 0.0:
            q0 = TINY
        if q1 == 0.0:
            q1 = TINY
        if q2 == 0.0:
            q2 = TINY
        if q3 == 0.0:
            q3 = TINY
        q0 = (t - d0[j]) - e / q0
        q1 = (t - d1[j]) - e / q1
        q2 = (t - d2[j]) - e / q2
        q3 = (t - d3[j]) - e / q3
        c0 += q0 < 0
        c1 += q1 < 0
        c2 += q2 < 0
        c3 += q3 < 0
    out[0] = c0
    out[1] = c1
    out[2] = c2
    out[3] = c3


cdef inline void _gershgorin(const double* diag, const double* off2, Py_ssize_t K,
                             double* lo, double* hi) noexcept nogil:
    cdef Py_ssize_t j
    cdef double r, a, b
    lo[0] = 1e308
    hi[0] = -1e308
    for j in range(K):
        r = 0.0
        if j > 0:
            r += sqrt(off2[j - 1])
        if j < K - 1:
            r += sqrt(off2[j])
        a = diag[j] - r
        b = diag[j] + r
        if a < lo[0]:
            lo[0] = a
        if b > hi[0]:
            hi[0] = b


cdef inline double _bisect(const double* diag, const double* off2, Py_ssize_t K,
                           Py_ssize_t j, double lo, double hi) noexcept nogil:
    # j-th largest eigenvalue (1-based), bisected until the bracket stops shrinking.
    cdef double mid
    cdef int it
    for it in range(2000):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _count_above(diag, off2, K, mid) >= j:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def sturm_count(double[:, ::1] diag, double[::1] off2, double t):
    """Count eigenvalues above ``t`` for each row of a batch.

    Args:
        diag: (B, K) diagonals.
        off2: (K-1,) squared off-diagonal, shared by the batch.
        t: threshold.

    Returns:
        int64 array of length B.
    """
    cdef Py_ssize_t B = diag.shape[0], K = diag.shape[1], b
    if off2.shape[0] != K - 1:
        raise ValueError("off2 must have length K-1")
    out = np.empty(B, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    cdef Py_ssize_t B4 = B - B % 4
    with nogil:
        for b in range(0, B4, 4):
            _count_above4(&diag[b, 0], &diag[b + 1, 0], &diag[b + 2, 0], &diag[b + 3, 0],
                          &off2[0], K, t, &o[b])
        for b in range(B4, B):
            o[b] = _count_above(&diag[b, 0], &off2[0], K, t)
    return out


def top_eigvals(double[:, ::1] diag, double[::1] off2, Py_ssize_t p):
    """The ``p`` largest eigenvalues of each matrix in a batch, descending."""
    cdef Py_ssize_t B = diag.shape[0], K = diag.shape[1], b, j
    if off2.shape[0] != K - 1:
        raise ValueError("off2 must have length K-1")
    if p < 1 or p > K:
        raise ValueError("need 1 <= p <= K")
    out = np.empty((B, p), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double lo, hi, top
    with nogil:
        for b in range(B):
            _gershgorin(&diag[b, 0], &off2[0], K, &lo, &hi)
            top = hi
            for j in range(p):
                # eigenvalue j+1 lies below the previous one
                o[b, j] = _bisect(&diag[b, 0], &off2[0], K, j + 1, lo, top)
                top = o[b, j] + 1e-300 + fabs(o[b, j]) * 1e-15
    return out


def count_in_window(double[:, ::1] diag, double[::1] off2, double lo, double hi):
    """Per-row counts above ``lo`` and above ``hi`` (hi only where the lo count is positive)."""
    cdef Py_ssize_t B = diag.shape[0], K = diag.shape[1], b
    if off2.shape[0] != K - 1:
        raise ValueError("off2 must have length K-1")
    a = sturm_count(diag, off2, lo)
    c = np.empty(B, dtype=np.int64)
    cdef cnp.int64_t[::1] av = a, cv = c
    with nogil:
        for b in range(B):
            if av[b] > 0:
                cv[b] = _count_above(&diag[b, 0], &off2[0], K, hi)
            else:
                cv[b] = 0
    return a, c

# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled resampling hot loop.

Mirrors ``pcsig._reference.null_fstats_chunk`` exactly: same inputs, same
outputs within floating-point roundoff.  The per-iteration work (rebuild s
synthetic rows, rank-s Gram update, symmetric eigendecomposition, constraint
F-statistics) runs without the GIL so chunks can execute on a thread pool.
"""

import numpy as np

from libc.math cimport INFINITY, fabs
from scipy.linalg.cython_blas cimport dsyrk
from scipy.linalg.cython_lapack cimport dsyevd

cdef double PERFECT_FIT_RTOL = 1e-12
# Stack buffer bound for per-row coefficients; the backend never exceeds it
# because HypothesisSpec.r is tiny in practice.
MAX_R = 64


cdef inline void _build_rows(
    const double[:, ::1] fit, const double[:, ::1] resid,
    const long[::1] rows, const long[:, ::1] gather_t,
    double[:, ::1] ys, int demean,
    const double[:, ::1] adjust_basis, int n_adjust,
) noexcept nogil:
    cdef Py_ssize_t s = rows.shape[0]
    cdef Py_ssize_t n = fit.shape[1]
    cdef Py_ssize_t k, j, i, a
    cdef double mean, coef
    for k in range(s):
        i = rows[k]
        for j in range(n):
            ys[k, j] = resid[i, gather_t[k, j]]
        if demean:
            mean = 0.0
            for j in range(n):
                mean += ys[k, j]
            mean /= n
            for j in range(n):
                ys[k, j] -= mean
        # Strip any component the scrambling leaked into the adjustment
        # subspace; the fit added below carries the preserved signal.
        for a in range(n_adjust):
            coef = 0.0
            for j in range(n):
                coef += adjust_basis[a, j] * ys[k, j]
            for j in range(n):
                ys[k, j] -= coef * adjust_basis[a, j]
        for j in range(n):
            ys[k, j] += fit[i, j]


cdef inline void _copy_old_rows(
    const double[:, ::1] base_rows, const long[::1] rows, double[:, ::1] yold,
) noexcept nogil:
    cdef Py_ssize_t s = rows.shape[0]
    cdef Py_ssize_t n = base_rows.shape[1]
    cdef Py_ssize_t k, j, i
    for k in range(s):
        i = rows[k]
        for j in range(n):
            yold[k, j] = base_rows[i, j]


cdef int _iteration_fstats(
    const double[:, ::1] gram, double[:, ::1] ys, double[:, ::1] yold,
    double[:, ::1] gwork, double[::1] eigvals,
    double[::1] lapack_work, int[::1] lapack_iwork,
    double[:, ::1] basis, double[:, ::1] wbasis,
    const double[:, ::1] rotation, int has_rotation,
    const double[:, ::1] proj, const double[::1] offset,
    int r, double[::1] out_t,
) noexcept nogil:
    """Gram update + eigendecomposition + F-statistics for one iteration."""
    cdef int n = <int>gram.shape[0]
    cdef int s = <int>ys.shape[0]
    cdef int q = <int>proj.shape[0]
    cdef Py_ssize_t i, j, k, t
    cdef double alpha, beta
    cdef int info = 0, lwork = <int>lapack_work.shape[0], liwork = <int>lapack_iwork.shape[0]
    cdef double best, av, g_k, sst, rss1, delta, h
    cdef Py_ssize_t jbest
    cdef double df_num = q, df_den = n - r
    cdef double gcoef[64]
    cdef char uplo = b'L', trans = b'N', jobz = b'V'

    # gwork := gram - yold^T yold + ys^T ys.
    # A row-major (s, n) buffer is a column-major (n, s) matrix, so trans='N'
    # forms the n x n cross-product; only the column-major 'L' triangle is
    # updated and dsyevd reads the same triangle.
    for i in range(n):
        for j in range(n):
            gwork[i, j] = gram[i, j]
    alpha = -1.0
    beta = 1.0
    dsyrk(&uplo, &trans, &n, &s, &alpha, &yold[0, 0], &n, &beta, &gwork[0, 0], &n)
    alpha = 1.0
    dsyrk(&uplo, &trans, &n, &s, &alpha, &ys[0, 0], &n, &beta, &gwork[0, 0], &n)

    dsyevd(&jobz, &uplo, &n, &gwork[0, 0], &n, &eigvals[0], &lapack_work[0],
           &lwork, &lapack_iwork[0], &liwork, &info)
    if info != 0:
        return info

    # Column-major eigenvector column (n - 1 - k) is row (n - 1 - k) of the
    # row-major view; eigenvalues ascend, so that row is the k-th strongest
    # right singular vector.  Sign fix: largest-|entry| element positive,
    # first maximum wins.
    for k in range(r):
        i = n - 1 - k
        best = -1.0
        jbest = 0
        for j in range(n):
            av = fabs(gwork[i, j])
            if av > best:
                best = av
                jbest = j
        if gwork[i, jbest] < 0.0:
            for j in range(n):
                basis[k, j] = -gwork[i, j]
        else:
            for j in range(n):
                basis[k, j] = gwork[i, j]

    if has_rotation:
        for k in range(r):
            for j in range(n):
                wbasis[k, j] = 0.0
                for i in range(r):
                    wbasis[k, j] += rotation[k, i] * basis[i, j]
    else:
        for k in range(r):
            for j in range(n):
                wbasis[k, j] = basis[k, j]

    for k in range(s):
        sst = 0.0
        for j in range(n):
            sst += ys[k, j] * ys[k, j]
        rss1 = sst
        for i in range(r):
            g_k = 0.0
            for j in range(n):
                g_k += wbasis[i, j] * ys[k, j]
            gcoef[i] = g_k
            rss1 -= g_k * g_k
        if rss1 < 0.0:
            rss1 = 0.0
        delta = 0.0
        for t in range(q):
            h = -offset[t]
            for i in range(r):
                h += proj[t, i] * gcoef[i]
            delta += h * h
        if rss1 <= PERFECT_FIT_RTOL * sst:
            out_t[k] = INFINITY
        else:
            out_t[k] = (delta / df_num) / (rss1 / df_den)
    return 0


def null_fstats_chunk(
    const double[:, ::1] fit,
    const double[:, ::1] resid,
    const double[:, ::1] base_rows,
    const double[:, ::1] gram,
    const long[:, ::1] row_sel,
    const long[:, :, ::1] gather,
    bint demean,
    adjust_basis,
    int r,
    rotation,
    const double[:, ::1] proj,
    const double[::1] offset,
    double[:, ::1] out,
):
    """Drop-in counterpart of :func:`pcsig._reference.null_fstats_chunk`."""
    cdef Py_ssize_t n_iter = row_sel.shape[0]
    cdef Py_ssize_t s = row_sel.shape[1]
    cdef int n = <int>base_rows.shape[1]
    cdef int has_rotation = 0
    cdef int n_adjust = 0
    cdef const double[:, ::1] rot_view
    cdef const double[:, ::1] adj_view
    if rotation is not None:
        rot_view = np.ascontiguousarray(rotation, dtype=np.float64)
        has_rotation = 1
    else:
        rot_view = np.zeros((1, 1))
    if adjust_basis is not None:
        adj_view = np.ascontiguousarray(adjust_basis, dtype=np.float64)
        n_adjust = <int>adj_view.shape[0]
    else:
        adj_view = np.zeros((1, 1))
    if r > MAX_R:
        raise ValueError(f"compiled kernel supports at most {MAX_R} components, got r={r}")

    cdef double[:, ::1] ys = np.empty((s, n))
    cdef double[:, ::1] yold = np.empty((s, n))
    cdef double[:, ::1] gwork = np.empty((n, n))
    cdef double[::1] eigvals = np.empty(n)
    cdef double[:, ::1] basis = np.empty((r, n))
    cdef double[:, ::1] wbasis = np.empty((r, n))
    # dsyevd workspace bounds for jobz='V'.
    cdef double[::1] lapack_work = np.empty(1 + 6 * n + 2 * n * n)
    cdef int[::1] lapack_iwork = np.empty(3 + 5 * n, dtype=np.int32)

    cdef Py_ssize_t t
    cdef int info
    cdef Py_ssize_t failed = -1
    with nogil:
        for t in range(n_iter):
            _build_rows(fit, resid, row_sel[t], gather[t], ys, demean, adj_view, n_adjust)
            _copy_old_rows(base_rows, row_sel[t], yold)
            info = _iteration_fstats(
                gram, ys, yold, gwork, eigvals, lapack_work, lapack_iwork,
                basis, wbasis, rot_view, has_rotation, proj, offset, r, out[t],
            )
            if info != 0:
                failed = t
                break
    return failed

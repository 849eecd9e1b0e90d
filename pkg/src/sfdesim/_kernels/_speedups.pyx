# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the one-step recursion and its dense extension.

Operation-for-operation mirror of `pure`: same atom evaluation, projection
branches, per-atom accumulation order and update sequence, so scalar
equations reproduce the fallback bit for bit and vector equations agree to
rounding of the matrix-vector products.
"""

import numpy as np

from libc.math cimport INFINITY, isfinite, log1p, pow, sqrt
from libc.stdint cimport int64_t

KIND_LINEAR = 0
KIND_LOG_GROWTH = 1


cdef void _project_row(const double[:, ::1] src, Py_ssize_t row, double radius,
                       double[::1] dst, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t i
    cdef double acc = 0.0
    cdef double nr, s
    for i in range(n):
        acc += src[row, i] * src[row, i]
    nr = sqrt(acc)
    if nr <= radius:
        for i in range(n):
            dst[i] = src[row, i]
    else:
        s = radius / nr
        for i in range(n):
            dst[i] = src[row, i] * s


cdef void _eval_all(int kind, const int64_t[::1] node, const double[::1] frac,
                    const double[:, :, ::1] wf, const double[:, :, :, ::1] wg,
                    const double[:, :, ::1] wh, const double[::1] scales, double radius,
                    const double[:, ::1] nodes, Py_ssize_t offset,
                    double[:, ::1] xs, double[::1] t0, double[::1] t1,
                    double[::1] fv, double[:, ::1] gv, double[::1] hv,
                    Py_ssize_t n, Py_ssize_t m) noexcept nogil:
    """Evaluate drift fv, diffusion gv and jump hv on the segment whose
    oldest node is nodes[offset]."""
    cdef Py_ssize_t q = node.shape[0]
    cdef Py_ssize_t a, i, j, l, row
    cdef double fr, acc, nr_now, nr_lag, p_now, p_lag

    for a in range(q):
        row = offset + node[a]
        fr = frac[a]
        if radius == INFINITY:
            if fr == 0.0:
                for j in range(n):
                    xs[a, j] = nodes[row, j]
            else:
                for j in range(n):
                    xs[a, j] = (1.0 - fr) * nodes[row, j] + fr * nodes[row + 1, j]
        else:
            if fr == 0.0:
                _project_row(nodes, row, radius, t0, n)
                for j in range(n):
                    xs[a, j] = t0[j]
            else:
                _project_row(nodes, row, radius, t0, n)
                _project_row(nodes, row + 1, radius, t1, n)
                for j in range(n):
                    xs[a, j] = (1.0 - fr) * t0[j] + fr * t1[j]

    if kind == 1:
        # psi(x) = x (1 + ln(1 + |x|))^(1/4); drift and diffusion read the
        # newest atom, the jump reads the oldest.
        acc = 0.0
        for j in range(n):
            acc += xs[q - 1, j] * xs[q - 1, j]
        nr_now = sqrt(acc)
        p_now = pow(1.0 + log1p(nr_now), 0.25)
        acc = 0.0
        for j in range(n):
            acc += xs[0, j] * xs[0, j]
        nr_lag = sqrt(acc)
        p_lag = pow(1.0 + log1p(nr_lag), 0.25)
        for j in range(n):
            fv[j] = scales[0] * (xs[q - 1, j] * p_now)
            gv[j, 0] = scales[1] * (xs[q - 1, j] * p_now)
            hv[j] = scales[2] * (xs[0, j] * p_lag)
        return

    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += wf[0, i, j] * xs[0, j]
        fv[i] = acc
        acc = 0.0
        for j in range(n):
            acc += wh[0, i, j] * xs[0, j]
        hv[i] = acc
    for a in range(1, q):
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += wf[a, i, j] * xs[a, j]
            fv[i] = fv[i] + acc
            acc = 0.0
            for j in range(n):
                acc += wh[a, i, j] * xs[a, j]
            hv[i] = hv[i] + acc
    for l in range(m):
        for i in range(n):
            acc = 0.0
            for j in range(n):
                acc += wg[0, l, i, j] * xs[0, j]
            gv[i, l] = acc
        for a in range(1, q):
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += wg[a, l, i, j] * xs[a, j]
                gv[i, l] = gv[i, l] + acc


def em_discrete(bound, double[:, ::1] nodes, Py_ssize_t n_lags, double dt,
                const double[:, ::1] db, const int64_t[::1] dn):
    """Compiled twin of pure.em_discrete; same contract."""
    cdef int kind = bound.kind
    cdef const int64_t[::1] node = bound.node
    cdef const double[::1] frac = bound.frac
    cdef const double[:, :, ::1] wf = bound.drift_w
    cdef const double[:, :, :, ::1] wg = bound.diff_w
    cdef const double[:, :, ::1] wh = bound.jump_w
    cdef const double[::1] scales = bound.scales
    cdef double radius = bound.radius
    cdef Py_ssize_t n = bound.dim
    cdef Py_ssize_t m = db.shape[1]
    cdef Py_ssize_t steps = dn.shape[0]
    cdef Py_ssize_t q = node.shape[0]

    scratch = np.empty((q + 2, n))
    cdef double[:, ::1] xs = scratch[:q]
    cdef double[::1] t0 = scratch[q]
    cdef double[::1] t1 = scratch[q + 1]
    work = np.empty((2, n))
    cdef double[::1] fv = work[0]
    cdef double[::1] hv = work[1]
    gbuf = np.empty((n, m))
    cdef double[:, ::1] gv = gbuf
    ybuf = np.empty(n)
    cdef double[::1] yv = ybuf

    cdef Py_ssize_t k, i, l
    cdef double cnt
    cdef int bad = -1

    with nogil:
        for k in range(steps):
            _eval_all(kind, node, frac, wf, wg, wh, scales, radius,
                      nodes, k, xs, t0, t1, fv, gv, hv, n, m)
            for i in range(n):
                yv[i] = nodes[n_lags + k, i] + fv[i] * dt
            for l in range(m):
                for i in range(n):
                    yv[i] = yv[i] + gv[i, l] * db[k, l]
            cnt = <double> dn[k]
            for i in range(n):
                yv[i] = yv[i] + hv[i] * cnt
            for i in range(n):
                if not isfinite(yv[i]):
                    bad = k
                    break
            if bad >= 0:
                break
            for i in range(n):
                nodes[n_lags + k + 1, i] = yv[i]
    return bad


def em_dense(bound, const double[:, ::1] coarse_nodes, Py_ssize_t n_lags,
             Py_ssize_t r, double dt, double fine_step,
             const double[:, ::1] brownian_cum, const int64_t[::1] poisson_cum,
             double[:, ::1] out):
    """Compiled twin of pure.em_dense; same contract."""
    cdef int kind = bound.kind
    cdef const int64_t[::1] node = bound.node
    cdef const double[::1] frac = bound.frac
    cdef const double[:, :, ::1] wf = bound.drift_w
    cdef const double[:, :, :, ::1] wg = bound.diff_w
    cdef const double[:, :, ::1] wh = bound.jump_w
    cdef const double[::1] scales = bound.scales
    cdef double radius = bound.radius
    cdef Py_ssize_t n = bound.dim
    cdef Py_ssize_t m = brownian_cum.shape[1]
    cdef Py_ssize_t cells = (out.shape[0] - 1) // r
    cdef Py_ssize_t q = node.shape[0]

    scratch = np.empty((q + 2, n))
    cdef double[:, ::1] xs = scratch[:q]
    cdef double[::1] t0 = scratch[q]
    cdef double[::1] t1 = scratch[q + 1]
    work = np.empty((2, n))
    cdef double[::1] fv = work[0]
    cdef double[::1] hv = work[1]
    gbuf = np.empty((n, m))
    cdef double[:, ::1] gv = gbuf
    ybuf = np.empty(n)
    cdef double[::1] yv = ybuf

    cdef Py_ssize_t k, i, j, l, kr
    cdef double elapsed, cnt
    cdef int bad = -1

    with nogil:
        for i in range(n):
            out[0, i] = coarse_nodes[n_lags, i]
        for k in range(cells):
            _eval_all(kind, node, frac, wf, wg, wh, scales, radius,
                      coarse_nodes, k, xs, t0, t1, fv, gv, hv, n, m)
            kr = k * r
            for j in range(1, r + 1):
                # j == r lands on the next coarse node: use dt itself so the
                # endpoint reproduces the discrete recursion bit for bit.
                elapsed = dt if j == r else j * fine_step
                for i in range(n):
                    yv[i] = coarse_nodes[n_lags + k, i] + fv[i] * elapsed
                for l in range(m):
                    for i in range(n):
                        yv[i] = yv[i] + gv[i, l] * (
                            brownian_cum[kr + j, l] - brownian_cum[kr, l]
                        )
                cnt = <double> (poisson_cum[kr + j] - poisson_cum[kr])
                for i in range(n):
                    yv[i] = yv[i] + hv[i] * cnt
                for i in range(n):
                    if not isfinite(yv[i]):
                        bad = k
                        break
                if bad >= 0:
                    break
                for i in range(n):
                    out[kr + j, i] = yv[i]
            if bad >= 0:
                break
    return bad

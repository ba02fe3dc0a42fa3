# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled integration kernels; see ``_kernels_py`` for the reference semantics."""
from libc.math cimport fabs, isfinite
from libc.stdlib cimport malloc, free

cdef double DIVERGENCE_LIMIT = 1.0e3


cdef inline void _truth_tendency(const double* x, const double* y, double* dx, double* dy,
                                 int K, int J, double hcb, double F, double b, double c) noexcept nogil:
    cdef int k, j, n = K * J
    cdef double s, cb = c * b, xk
    for k in range(K):
        s = 0.0
        for j in range(k * J, (k + 1) * J):
            s = s + y[j]
        dx[k] = (-x[(k - 1 + K) % K] * (x[(k - 2 + K) % K] - x[(k + 1) % K])
                 - x[k] + F - hcb * s)
    # interior of the fast ring without index wrapping
    for k in range(K):
        xk = hcb * x[k]
        for j in range(k * J, (k + 1) * J):
            if j >= 1 and j <= n - 3:
                dy[j] = -cb * y[j + 1] * (y[j + 2] - y[j - 1]) - c * y[j] + xk
            else:
                dy[j] = (-cb * y[(j + 1) % n] * (y[(j + 2) % n] - y[(j - 1 + n) % n])
                         - c * y[j] + xk)


def truth_run(double[::1] x, double[::1] y, int K, int J, double h, double F, double b,
              double c, double dt, long n_steps, long store_every, double[:, ::1] out):
    cdef int n = K * J, k, j
    cdef long step, row = 0
    cdef double hcb = h * c / b
    cdef double third = 1.0 / 3.0, twothird = 2.0 / 3.0
    cdef long failed = -1
    cdef double* buf = <double*> malloc(sizeof(double) * 4 * (K + n))
    if buf == NULL:
        raise MemoryError()
    cdef double* dx = buf
    cdef double* dy = buf + K
    cdef double* sx = buf + K + n
    cdef double* sy = buf + 2 * K + n
    cdef double* x0 = &x[0]
    cdef double* y0 = &y[0]
    with nogil:
        if store_every > 0:
            for k in range(K):
                out[0, k] = x0[k]
            row = 1
        for step in range(1, n_steps + 1):
            _truth_tendency(x0, y0, dx, dy, K, J, hcb, F, b, c)
            for k in range(K):
                sx[k] = x0[k] + dt * dx[k]
            for j in range(n):
                sy[j] = y0[j] + dt * dy[j]
            _truth_tendency(sx, sy, dx, dy, K, J, hcb, F, b, c)
            for k in range(K):
                sx[k] = 0.75 * x0[k] + 0.25 * (sx[k] + dt * dx[k])
            for j in range(n):
                sy[j] = 0.75 * y0[j] + 0.25 * (sy[j] + dt * dy[j])
            _truth_tendency(sx, sy, dx, dy, K, J, hcb, F, b, c)
            for k in range(K):
                x0[k] = x0[k] * third + twothird * (sx[k] + dt * dx[k])
            for j in range(n):
                y0[j] = y0[j] * third + twothird * (sy[j] + dt * dy[j])
            for k in range(K):
                if not (fabs(x0[k]) <= DIVERGENCE_LIMIT):
                    failed = step
                    break
            if failed >= 0:
                break
            if store_every > 0 and step % store_every == 0:
                for k in range(K):
                    out[row, k] = x0[k]
                row += 1
    free(buf)
    return failed


cdef inline void _coarse_drift(const double* z, double* f, int K, double F,
                               double b0, double b1, double b2, double b3,
                               const double* d0) noexcept nogil:
    cdef int k
    cdef double v
    for k in range(K):
        v = z[k]
        f[k] = (-z[(k - 1 + K) % K] * (z[(k - 2 + K) % K] - z[(k + 1) % K]) - v + F
                + (b0 + v * (b1 + v * (b2 + v * b3))) + d0[k])


def coarse_run(double[:, ::1] x, double[:, ::1] r, double F, double dt, long n_steps,
               long store_every, double[::1] poly, double[::1] d0, double[:, ::1] phi,
               double[::1] c0, double[:, ::1] G, double[:, ::1] xi, double[::1] a,
               double[::1] bq, double[:, ::1] proj, double[:, :, ::1] eps,
               double[:, :, ::1] out, long[::1] diverged):
    cdef int n_traj = x.shape[0], K = x.shape[1]
    cdef int t, i, k, l
    cdef long step
    cdef double s, pv
    cdef double b0 = poly[0], b1 = poly[1], b2 = poly[2], b3 = poly[3]
    cdef double third = 1.0 / 3.0, twothird = 2.0 / 3.0
    cdef double* buf = <double*> malloc(sizeof(double) * 6 * K)
    if buf == NULL:
        raise MemoryError()
    cdef double* rn = buf
    cdef double* cr = buf + K
    cdef double* inc = buf + 2 * K
    cdef double* f = buf + 3 * K
    cdef double* s1 = buf + 4 * K
    cdef double* s2 = buf + 5 * K
    cdef int n_dead = 0
    with nogil:
        for t in range(n_traj):
            if store_every > 0:
                for k in range(K):
                    out[0, t, k] = x[t, k]
            for step in range(1, n_steps + 1):
                if diverged[t] >= 0:
                    if store_every > 0 and step % store_every == 0:
                        for k in range(K):
                            out[step // store_every, t, k] = x[t, k]
                    continue
                for i in range(K):
                    s = c0[i]
                    for l in range(K):
                        s = s + phi[i, l] * r[t, l] + G[i, l] * eps[step - 1, t, l]
                    rn[i] = s
                for i in range(K):
                    r[t, i] = rn[i]
                    pv = 0.0
                    for k in range(K):
                        pv = pv + proj[k, i] * x[t, k]
                    cr[i] = (a[i] + bq[i] * pv * pv) * rn[i]
                for k in range(K):
                    s = 0.0
                    for i in range(K):
                        s = s + xi[k, i] * cr[i]
                    inc[k] = s
                _coarse_drift(&x[t, 0], f, K, F, b0, b1, b2, b3, &d0[0])
                for k in range(K):
                    s1[k] = x[t, k] + dt * f[k] + inc[k]
                _coarse_drift(s1, f, K, F, b0, b1, b2, b3, &d0[0])
                for k in range(K):
                    s2[k] = 0.75 * x[t, k] + 0.25 * (s1[k] + dt * f[k] + inc[k])
                _coarse_drift(s2, f, K, F, b0, b1, b2, b3, &d0[0])
                for k in range(K):
                    s1[k] = x[t, k] * third + twothird * (s2[k] + dt * f[k] + inc[k])
                for k in range(K):
                    if not (fabs(s1[k]) <= DIVERGENCE_LIMIT):
                        diverged[t] = step
                        break
                if diverged[t] < 0:
                    for k in range(K):
                        x[t, k] = s1[k]
                if store_every > 0 and step % store_every == 0:
                    for k in range(K):
                        out[step // store_every, t, k] = x[t, k]
    free(buf)
    for t in range(n_traj):
        if diverged[t] >= 0:
            n_dead += 1
    return n_dead

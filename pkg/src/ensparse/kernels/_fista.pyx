# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernel for l1-penalized coding.

Same algorithm and contract as ``reference.lasso_kernel``; see that module
for the documentation. The per-iteration work is two symmetric matrix-vector
products (BLAS dgemv) plus O(K) vector updates.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, sqrt
from scipy.linalg.cython_blas cimport dgemv

cnp.import_array()


def lasso_kernel(double[:, ::1] gram, double[::1] corr, double xtx,
                 double lam, double step, int max_iter, double tol,
                 bint record_objective=False):
    cdef int k = corr.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] z_arr = np.zeros(k)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] trace_arr
    cdef double[::1] z = z_arr
    cdef double[::1] x_prev = np.zeros(k)
    cdef double[::1] y = np.zeros(k)
    cdef double[::1] gwork = np.zeros(k)
    cdef double[::1] trace

    if record_objective:
        trace_arr = np.empty(max_iter)
        trace = trace_arr
    else:
        trace_arr = np.empty(0)
        trace = trace_arr

    cdef char no_trans = b'N'
    cdef int inc = 1
    cdef double one = 1.0, zero = 0.0
    cdef double f_x = xtx, f_z, f_new, kkt, t = 1.0, t_new
    cdef double thresh = step * lam, g2 = 2.0 * step
    cdef double v, gj, sgn, quad, l1, ratio_a, ratio_b, xj
    cdef int it = 0, j
    cdef bint converged = False, take_z

    if k == 0:
        return z_arr, 0.0, 0, True, (trace_arr[:0] if record_objective else None)

    with nogil:
        for it in range(1, max_iter + 1):
            # z = soft(y - 2*step*(G y - c), step*lam)
            dgemv(&no_trans, &k, &k, &one, &gram[0, 0], &k, &y[0], &inc,
                  &zero, &gwork[0], &inc)
            for j in range(k):
                v = y[j] - g2 * (gwork[j] - corr[j])
                if v > thresh:
                    z[j] = v - thresh
                elif v < -thresh:
                    z[j] = v + thresh
                else:
                    z[j] = 0.0

            # objective and stationarity residual at z
            dgemv(&no_trans, &k, &k, &one, &gram[0, 0], &k, &z[0], &inc,
                  &zero, &gwork[0], &inc)
            kkt = 0.0
            quad = 0.0
            l1 = 0.0
            for j in range(k):
                gj = gwork[j] - corr[j]
                if z[j] != 0.0:
                    sgn = 1.0 if z[j] > 0.0 else -1.0
                    v = fabs(2.0 * gj + lam * sgn)
                    l1 += fabs(z[j])
                else:
                    v = 2.0 * fabs(gj) - lam
                    if v < 0.0:
                        v = 0.0
                if v > kkt:
                    kkt = v
                quad += z[j] * gwork[j] - 2.0 * corr[j] * z[j]
            f_z = quad + xtx + lam * l1

            if kkt <= tol:
                converged = True
                if record_objective:
                    trace[it - 1] = f_z if f_z < f_x else f_x
                break

            # monotone safeguard (with momentum restart on rejection), then
            # accelerated extrapolation
            take_z = f_z <= f_x
            f_new = f_z if take_z else f_x
            if not take_z:
                t = 1.0
            if record_objective:
                trace[it - 1] = f_new
            t_new = 0.5 * (1.0 + sqrt(1.0 + 4.0 * t * t))
            ratio_a = t / t_new
            ratio_b = (t - 1.0) / t_new
            if take_z:
                # x_new = z: the (t-1)/t_new momentum term uses x_new - x_prev
                for j in range(k):
                    xj = z[j]
                    y[j] = xj + ratio_b * (xj - x_prev[j])
                    x_prev[j] = xj
            else:
                # x_new = x_prev: only the prox-point term remains
                for j in range(k):
                    y[j] = x_prev[j] + ratio_a * (z[j] - x_prev[j])
            f_x = f_new
            t = t_new

    result_trace = trace_arr[:it] if record_objective else None
    return z_arr, kkt, it, converged, result_trace

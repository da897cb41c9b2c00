# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled filter core: the forecast/analysis recursion for all model
families, specialized to states of dimension <= 3 and a scalar displacement
measurement.

This is a line-for-line twin of ``_pykernels.run_filter_core``; any change
here must be mirrored there (the test suite cross-checks the two).  The
main loop releases the GIL so likelihood evaluations can run on threads.
"""

from libc.math cimport INFINITY, isfinite, log, sqrt

import numpy as np

DEF TWO_PI = 6.283185307179586476925286766559

# Family codes; must match models.Family.
DEF FAM_STEP = 1
DEF FAM_CONST = 2
DEF FAM_OU = 3
DEF FAM_WALK = 4


def run_filter_core(int family, const double[::1] coeffs, double dt, Py_ssize_t n_steps,
                    double t0, const long[::1] obs_idx, const double[::1] obs_vals,
                    double meas_var, const double[::1] mean0, const double[:, ::1] cov0,
                    bint store):
    """Same contract as ``_pykernels.run_filter_core``."""
    cdef Py_ssize_t n = mean0.shape[0]
    cdef Py_ssize_t n_obs = obs_idx.shape[0]

    innovations_arr = np.full((n_obs, 2), np.nan)
    cdef double[:, ::1] innovations = innovations_arr
    cdef double[:, ::1] mf, ma
    cdef double[:, :, ::1] cf, ca
    if store:
        mean_f_arr = np.zeros((n_steps + 1, n))
        cov_f_arr = np.zeros((n_steps + 1, n, n))
        mean_a_arr = np.zeros((n_steps + 1, n))
        cov_a_arr = np.zeros((n_steps + 1, n, n))
    else:
        mean_f_arr = np.zeros((1, n))
        cov_f_arr = np.zeros((1, n, n))
        mean_a_arr = np.zeros((1, n))
        cov_a_arr = np.zeros((1, n, n))
    mf = mean_f_arr
    cf = cov_f_arr
    ma = mean_a_arr
    ca = cov_a_arr

    cdef double m = coeffs[0], c = coeffs[1], sigma = coeffs[2]
    cdef double p3 = coeffs[3], p4 = coeffs[4], p5 = coeffs[5]
    cdef double a22 = 1.0 - dt * c / m
    cdef double sq = sqrt(dt)

    cdef double x[3]
    cdef double P[3][3]
    cdef double A[3][3]
    cdef double T[3][3]
    cdef double NP[3][3]
    cdef double g[3]
    cdef double nx[3]
    cdef Py_ssize_t i, j, l, k, jo = 0
    cdef Py_ssize_t diverged_at = -1
    cdef double log_lik = 0.0
    cdef double S, r, t, kt, decay, acc
    cdef bint bad

    for i in range(n):
        x[i] = mean0[i]
        for j in range(n):
            P[i][j] = cov0[i, j]

    with nogil:
        for k in range(n_steps + 1):
            if store:
                for i in range(n):
                    mf[k, i] = x[i]
                    for j in range(n):
                        cf[k, i, j] = P[i][j]
            if jo < n_obs and obs_idx[jo] == k:
                S = P[0][0] + meas_var
                if not isfinite(S) or S <= 0.0:
                    diverged_at = k
                    break
                r = obs_vals[jo] - x[0]
                innovations[jo, 0] = r
                innovations[jo, 1] = S
                log_lik += -0.5 * (log(TWO_PI * S) + r * r / S)
                for i in range(n):
                    g[i] = P[i][0] / S
                for i in range(n):
                    x[i] = x[i] + g[i] * r
                # Joseph-form update: P <- (I-gC) P (I-gC)^T + R g g^T
                for i in range(n):
                    for j in range(n):
                        T[i][j] = P[i][j] - g[i] * P[0][j]
                for i in range(n):
                    for j in range(n):
                        NP[i][j] = T[i][j] - T[i][0] * g[j] + meas_var * g[i] * g[j]
                for i in range(n):
                    for j in range(n):
                        P[i][j] = 0.5 * (NP[i][j] + NP[j][i])
                jo += 1
            if store:
                for i in range(n):
                    ma[k, i] = x[i]
                    for j in range(n):
                        ca[k, i, j] = P[i][j]
            if k == n_steps:
                break

            # Forecast from t = t0 + k*dt to the next grid point.
            t = t0 + k * dt
            if family == FAM_STEP or family == FAM_CONST:
                if family == FAM_STEP:
                    kt = p3 + p4 if t < p5 else p3
                else:
                    kt = p3
                A[0][0] = 1.0
                A[0][1] = dt
                A[1][0] = -(dt / m) * kt
                A[1][1] = a22
                nx[0] = x[0] + dt * x[1]
                nx[1] = (-(dt / m) * x[0]) * kt + a22 * x[1]
            elif family == FAM_OU:
                decay = 1.0 - dt / p4
                A[0][0] = 1.0
                A[0][1] = dt
                A[0][2] = 0.0
                A[1][0] = -(dt / m) * p3
                A[1][1] = a22
                A[1][2] = dt / m
                A[2][0] = 0.0
                A[2][1] = 0.0
                A[2][2] = decay
                nx[0] = x[0] + dt * x[1]
                nx[1] = (-(dt / m) * x[0]) * p3 + a22 * x[1] + (dt / m) * x[2]
                nx[2] = decay * x[2]
            else:
                A[0][0] = 1.0
                A[0][1] = dt
                A[0][2] = 0.0
                A[1][0] = -(dt / m) * x[2]
                A[1][1] = a22
                A[1][2] = -(dt / m) * x[0]
                A[2][0] = 0.0
                A[2][1] = 0.0
                A[2][2] = 1.0
                nx[0] = x[0] + dt * x[1]
                nx[1] = (-(dt / m) * x[0]) * x[2] + a22 * x[1]
                nx[2] = x[2]

            # P <- A P A^T + B B^T with B B^T diagonal per family.
            for i in range(n):
                for j in range(n):
                    acc = 0.0
                    for l in range(n):
                        acc += A[i][l] * P[l][j]
                    T[i][j] = acc
            for i in range(n):
                for j in range(n):
                    acc = 0.0
                    for l in range(n):
                        acc += T[i][l] * A[j][l]
                    NP[i][j] = acc
            if family == FAM_STEP or family == FAM_CONST:
                NP[1][1] += dt * sigma * sigma
            elif family == FAM_OU:
                NP[2][2] += dt * sigma * sigma
            else:
                NP[1][1] += dt * sigma * sigma / (m * m)
                NP[2][2] += dt * p3 * p3
            for i in range(n):
                x[i] = nx[i]
                for j in range(n):
                    P[i][j] = 0.5 * (NP[i][j] + NP[j][i])

            bad = 0
            for i in range(n):
                if not isfinite(x[i]) or not isfinite(P[i][i]):
                    bad = 1
            if bad:
                diverged_at = k + 1
                break

    if diverged_at >= 0:
        log_lik = -INFINITY
    if store:
        return (log_lik, diverged_at, innovations_arr,
                mean_f_arr, cov_f_arr, mean_a_arr, cov_a_arr)
    return log_lik, diverged_at, innovations_arr, None, None, None, None

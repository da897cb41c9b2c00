"""Pure-numpy filter core: the fallback when the compiled kernel is absent.

``run_filter_core`` has the exact same signature and return contract as the
Cython version in ``_kernels.pyx``; keep the two in sync (the test suite
cross-checks them against each other).
"""

from __future__ import annotations

import math

import numpy as np

from . import models


def forecast_step(family, coeffs, mean, cov, dt, t):
    """One covariance forecast: mean through the deterministic map,
    cov -> A cov A^T + B B^T (unit-variance drivers, all scaling in B).

    Non-finite results are a handled outcome (the caller detects and maps
    them to a diverged run), so numpy warnings are silenced here.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        A = models._family_jac_state(family, coeffs, mean, dt, t)
        B = models._family_jac_noise(family, coeffs, dt)
        new_mean = models._family_mean(family, coeffs, mean, dt, t)
        new_cov = A @ cov @ A.T + B @ B.T
        new_cov = 0.5 * (new_cov + new_cov.T)
    return new_mean, new_cov


def analysis_step(mean, cov, d, meas_var):
    """Measurement update on the displacement slot (C = e1, D = 1).

    Returns (mean, cov, residual, predictive_var, loglik_increment); the
    covariance update uses the Joseph form for positive-semidefinite
    safety.  The caller is responsible for rejecting a non-positive or
    non-finite predictive variance.
    """
    S = cov[0, 0] + meas_var
    r = d - mean[0]
    gain = cov[:, 0] / S
    new_mean = mean + gain * r
    T = cov - np.outer(gain, cov[0, :])
    new_cov = T - np.outer(T[:, 0], gain) + meas_var * np.outer(gain, gain)
    new_cov = 0.5 * (new_cov + new_cov.T)
    inc = -0.5 * (math.log(2.0 * math.pi * S) + r * r / S)
    return new_mean, new_cov, r, S, inc


def run_filter_core(family, coeffs, dt, n_steps, t0, obs_idx, obs_vals, meas_var,
                    mean0, cov0, store):
    """Run the full forecast/analysis recursion along the grid.

    Grid points are t0 + k*dt for k = 0..n_steps; observations attach to
    grid indices ``obs_idx``.  Numerical breakdown (non-finite state or a
    non-positive predictive variance) does not raise: the log-likelihood
    becomes -inf and the failing grid index is reported.

    Returns (log_lik, diverged_at, innovations, mean_f, cov_f, mean_a, cov_a)
    where diverged_at is -1 on success and the four trajectory arrays are
    None unless ``store`` is true.
    """
    n = len(mean0)
    n_obs = len(obs_idx)
    mean = np.array(mean0, dtype=float)
    cov = np.array(cov0, dtype=float)
    innovations = np.full((n_obs, 2), np.nan)
    if store:
        mean_f = np.zeros((n_steps + 1, n))
        cov_f = np.zeros((n_steps + 1, n, n))
        mean_a = np.zeros((n_steps + 1, n))
        cov_a = np.zeros((n_steps + 1, n, n))
    else:
        mean_f = cov_f = mean_a = cov_a = None

    log_lik = 0.0
    diverged_at = -1
    jo = 0
    for k in range(n_steps + 1):
        if store:
            mean_f[k] = mean
            cov_f[k] = cov
        if jo < n_obs and obs_idx[jo] == k:
            S = cov[0, 0] + meas_var
            if not math.isfinite(S) or S <= 0.0:
                diverged_at = k
                break
            mean, cov, r, S, inc = analysis_step(mean, cov, float(obs_vals[jo]), meas_var)
            innovations[jo, 0] = r
            innovations[jo, 1] = S
            log_lik += inc
            jo += 1
        if store:
            mean_a[k] = mean
            cov_a[k] = cov
        if k == n_steps:
            break
        mean, cov = forecast_step(family, coeffs, mean, cov, dt, t0 + k * dt)
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(np.diagonal(cov)))):
            diverged_at = k + 1
            break

    if diverged_at >= 0:
        log_lik = -math.inf
    return log_lik, diverged_at, innovations, mean_f, cov_f, mean_a, cov_a

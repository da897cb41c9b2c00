"""Independent reference implementations used only to check the package.

Everything here is deliberately written from scratch against textbook
formulas (plain Kalman recursions, closed-form Gaussian integrals) and
must not import any stiffcal internals beyond plain data.
"""

import math

import numpy as np
from scipy.stats import norm


def kalman_loglik(step_matrix, process_cov, x0, P0, n_steps, dt, obs_idx, obs_vals,
                  meas_var):
    """Straight-line Kalman filter for a linear model x' = A(t) x + noise.

    ``step_matrix`` maps time t -> transition matrix A; ``process_cov`` is
    the per-step process covariance.  Measurement is the first state
    coordinate plus N(0, meas_var) noise.  Uses the plain (non-Joseph)
    covariance update, independent of the package's path.

    Returns (log_lik, final_mean).
    """
    x = np.array(x0, dtype=float)
    P = np.array(P0, dtype=float)
    n = x.size
    I = np.eye(n)
    C = np.zeros((1, n))
    C[0, 0] = 1.0
    log_lik = 0.0
    jo = 0
    obs_idx = np.asarray(obs_idx)
    for k in range(n_steps + 1):
        if jo < obs_idx.size and obs_idx[jo] == k:
            S = P[0, 0] + meas_var
            r = obs_vals[jo] - x[0]
            log_lik += norm.logpdf(r, scale=math.sqrt(S))
            K = P[:, :1] / S
            x = x + K[:, 0] * r
            P = (I - K @ C) @ P
            jo += 1
        if k < n_steps:
            A = step_matrix(k * dt)
            x = A @ x
            P = A @ P @ A.T + process_cov
    return log_lik, x


def gaussian_mean_log_evidence(y, sigma, lo, hi):
    """Closed-form log evidence for y_i ~ N(mu, sigma^2), mu ~ U(lo, hi).

    The likelihood integrates analytically against the flat prior:
    a Gaussian in mu with mean ybar and variance sigma^2/n, truncated to
    the prior box.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    ybar = y.mean()
    spread = float(((y - ybar) ** 2).sum())
    post_sd = sigma / math.sqrt(n)
    box_mass = norm.cdf((hi - ybar) / post_sd) - norm.cdf((lo - ybar) / post_sd)
    return (-math.log(hi - lo)
            - 0.5 * n * math.log(2.0 * math.pi * sigma ** 2)
            - spread / (2.0 * sigma ** 2)
            + 0.5 * math.log(2.0 * math.pi * sigma ** 2 / n)
            + math.log(box_mass))


def gaussian_mean_loglik(y, sigma):
    """log p(y | mu) as a function of mu, for the conjugate test problem."""
    y = np.asarray(y, dtype=float)
    n = y.size
    const = -0.5 * n * math.log(2.0 * math.pi * sigma ** 2)

    def loglik(theta):
        mu = float(np.asarray(theta).ravel()[0])
        return const - float(((y - mu) ** 2).sum()) / (2.0 * sigma ** 2)

    return loglik


def uniform_box_logprior(lo, hi, dim=1):
    log_density = -dim * math.log(hi - lo)

    def logprior(theta):
        v = np.asarray(theta, dtype=float).ravel()
        if np.all(v >= lo) and np.all(v <= hi):
            return log_density
        return -math.inf

    return logprior


def zero_crossing_frequency(times, signal):
    """Oscillation frequency from linearly interpolated zero crossings."""
    times = np.asarray(times, dtype=float)
    signal = np.asarray(signal, dtype=float)
    sign_change = np.where(np.diff(np.signbit(signal)))[0]
    crossings = []
    for k in sign_change:
        frac = signal[k] / (signal[k] - signal[k + 1])
        crossings.append(times[k] + frac * (times[k + 1] - times[k]))
    crossings = np.asarray(crossings)
    if crossings.size < 3:
        raise ValueError("too few zero crossings to estimate a frequency")
    return (crossings.size - 1) / (2.0 * (crossings[-1] - crossings[0]))


def envelope_decay_rate(times, signal):
    """Exponential decay rate of |peak| amplitudes via linear regression."""
    times = np.asarray(times, dtype=float)
    signal = np.asarray(signal, dtype=float)
    interior = np.arange(1, signal.size - 1)
    peaks = interior[(np.abs(signal[interior]) >= np.abs(signal[interior - 1]))
                     & (np.abs(signal[interior]) >= np.abs(signal[interior + 1]))]
    peaks = peaks[np.abs(signal[peaks]) > 1e-6]
    if peaks.size < 4:
        raise ValueError("too few amplitude peaks to estimate a decay rate")
    slope, _ = np.polyfit(times[peaks], np.log(np.abs(signal[peaks])), 1)
    return -slope

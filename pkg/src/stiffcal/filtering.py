"""Kalman filtering over the (possibly augmented) oscillator state.

The filter runs on a uniform computational grid, forecasting between
observations and applying a measurement analysis wherever a grid point
carries a data point.  For the linear candidates (M1-M3) the Jacobian-based
recursion is algebraically the plain Kalman filter; the bilinear
stiffness-walk candidates (M4-M6) make it a genuine extended filter.

Alongside the state beliefs the filter accumulates the data log-likelihood
(one Gaussian innovation density per observation), which is what the
transitional MCMC sampler consumes.  ``run_filter`` is a pure function, so
any number of (model, parameter) evaluations may run concurrently over
shared read-only data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import backend, models
from ._pykernels import analysis_step, forecast_step

DEFAULT_GRID_DT = 0.004  # s; 10 substeps per 25 Hz observation interval

# Initial-belief spread defaults; see models.initial_belief_arrays.
DEFAULT_VEL_STD = 50.0    # mm/s
DEFAULT_STIFF_STD = 25.0  # N/mm

_REL_GRID_TOL = 1e-9


class FilterError(RuntimeError):
    """Base class for filter failures."""


class FilterDivergedError(FilterError):
    """Non-finite mean or covariance encountered."""


class FilterBreakdownError(FilterError):
    """Predictive variance lost positivity."""


class GridMismatchError(ValueError):
    """Observation times do not sit on the computational grid."""


@dataclass
class GaussianBelief:
    """Gaussian state belief (mean vector, covariance matrix)."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        n = self.mean.size
        if self.mean.shape != (n,) or self.cov.shape != (n, n):
            raise ValueError(f"mean {self.mean.shape} and cov {self.cov.shape} are inconsistent")

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class ObservationSeries:
    """Scalar displacement observations at strictly increasing times.

    ``noise_std`` is the known sensor noise standard deviation (mm); it may
    be zero for noise-free synthetic data, but filtering such a series
    requires a positive value.
    """

    times: np.ndarray
    values: np.ndarray
    noise_std: float

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        values = np.array(self.values, dtype=float)
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if times.shape != values.shape or times.ndim != 1:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if times.size and not np.all(np.diff(times) > 0):
            raise ValueError("observation times must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("observation values must be finite")
        if not (self.noise_std >= 0):
            raise ValueError("noise_std must be nonnegative")

    @property
    def n_obs(self) -> int:
        return self.times.size

    @property
    def variance(self) -> float:
        return self.noise_std ** 2


@dataclass
class FilterResult:
    """Output of one filter pass.

    ``log_lik`` is the accumulated sum of per-observation Gaussian log
    densities (-inf if the filter diverged, with ``diverged_at`` holding
    the failing grid index).  ``innovations`` carries one (residual,
    predictive variance) row per observation.  The four trajectory arrays
    hold forecast and analysis beliefs at every grid point (analysis equals
    forecast wherever no observation attaches) and are None when the run
    was invoked without belief storage.
    """

    log_lik: float
    grid_times: np.ndarray
    obs_indices: np.ndarray
    innovations: np.ndarray
    mean_forecast: np.ndarray | None
    cov_forecast: np.ndarray | None
    mean_analysis: np.ndarray | None
    cov_analysis: np.ndarray | None
    diverged_at: int | None = None

    def forecast_belief(self, k: int) -> GaussianBelief:
        return GaussianBelief(self.mean_forecast[k], self.cov_forecast[k])

    def analysis_belief(self, k: int) -> GaussianBelief:
        return GaussianBelief(self.mean_analysis[k], self.cov_analysis[k])


def initial_belief(model: models.CandidateModel, theta, d0: float, meas_var: float,
                   vel_std: float = DEFAULT_VEL_STD,
                   stiff_std: float = DEFAULT_STIFF_STD) -> GaussianBelief:
    """Default calibration starting belief for ``model`` (see models for the
    slot-by-slot construction)."""
    mean, cov = models.initial_belief_arrays(model, theta, d0, meas_var, vel_std, stiff_std)
    return GaussianBelief(mean, cov)


def forecast(belief: GaussianBelief, model: models.CandidateModel, theta, dt: float,
             t: float = 0.0) -> GaussianBelief:
    """Propagate a belief one grid step (no data).

    The mean moves through the deterministic one-step map; the covariance
    through the state Jacobian plus the driver loading, A P A^T + B B^T
    (the drivers are unit-variance, all scaling lives in B).

    Raises FilterDivergedError if the propagated belief is non-finite.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if belief.dim != model.layout.n_state:
        raise ValueError(f"belief dimension {belief.dim} does not match {model.id}")
    coeffs = model.pack_coeffs(theta)
    mean, cov = forecast_step(int(model.family), coeffs, belief.mean, belief.cov, dt, t)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise FilterDivergedError("non-finite forecast mean or covariance")
    return GaussianBelief(mean, cov)


def analyze(belief: GaussianBelief, model: models.CandidateModel | None, d: float,
            meas_var: float) -> tuple[GaussianBelief, float]:
    """Measurement update at an observation.

    Returns the updated belief and the log-likelihood increment, the
    Gaussian density of ``d`` under the predictive distribution
    N(mean[0], P[0,0] + meas_var).  ``model`` is only used to validate the
    belief dimension and may be None.

    Raises FilterBreakdownError if the predictive variance is not positive
    and finite.
    """
    if meas_var <= 0.0:
        raise ValueError("meas_var must be positive")
    if model is not None and belief.dim != model.layout.n_state:
        raise ValueError(f"belief dimension {belief.dim} does not match {model.id}")
    S = belief.cov[0, 0] + meas_var
    if not math.isfinite(S) or S <= 0.0:
        raise FilterBreakdownError(f"predictive variance {S} is not positive")
    mean, cov, _, _, inc = analysis_step(belief.mean, belief.cov, float(d), meas_var)
    return GaussianBelief(mean, cov), inc


def _grid_indices(times: np.ndarray, grid_dt: float, t0: float, n_steps: int) -> np.ndarray:
    idx = np.empty(times.size, dtype=np.int64)
    for j, t in enumerate(times):
        k = round((t - t0) / grid_dt)
        if abs((t0 + k * grid_dt) - t) > _REL_GRID_TOL * max(1.0, abs(t)):
            raise GridMismatchError(
                f"observation time {t} is not within tolerance of the grid "
                f"(grid_dt={grid_dt}, nearest grid point {t0 + k * grid_dt})")
        if k < 0 or k > n_steps:
            raise GridMismatchError(f"observation time {t} falls outside the grid")
        idx[j] = k
    if idx.size > 1 and np.any(np.diff(idx) <= 0):
        raise GridMismatchError("observation spacing is finer than the grid step")
    return idx


def run_filter(model: models.CandidateModel, theta, data: ObservationSeries,
               grid_dt: float = DEFAULT_GRID_DT, *, horizon: float | None = None,
               t0: float = 0.0, init_belief: GaussianBelief | None = None,
               vel_std: float = DEFAULT_VEL_STD, stiff_std: float = DEFAULT_STIFF_STD,
               store_beliefs: bool = True, backend_name: str | None = None) -> FilterResult:
    """Filter a full observation series on a uniform grid.

    Parameters
    ----------
    model, theta
        Candidate and its static-parameter values (ParamVector or array in
        the model's coordinate order).
    data
        Observation series; every observation time must lie on the grid
        within 1e-9 relative tolerance.
    grid_dt
        Computational grid step (s).
    horizon
        Grid extent from ``t0``; defaults to the last observation time.
        Required when ``data`` is empty.
    t0, init_belief
        Start time and starting belief, for resuming a run mid-series.  By
        default the belief anchors the displacement at the first
        observation (see ``initial_belief``).
    store_beliefs
        When false, skip the per-grid-point belief trajectories (the fast
        path used inside MCMC).

    The run is deterministic given its arguments.  Numerical divergence is
    reported as ``log_lik == -inf`` with ``diverged_at`` set instead of an
    exception, so a sampler can assign zero weight and continue.
    """
    if grid_dt <= 0.0:
        raise ValueError("grid_dt must be positive")
    if data.n_obs and data.variance <= 0.0:
        raise ValueError("filtering observations requires noise_std > 0")
    if horizon is None:
        if not data.n_obs:
            raise ValueError("horizon is required for an empty observation series")
        horizon = float(data.times[-1]) - t0
    n_steps = round(horizon / grid_dt)
    if n_steps <= 0:
        raise ValueError("grid must contain at least one step")
    obs_idx = _grid_indices(data.times, grid_dt, t0, n_steps)

    values = model.param_values(theta)
    if init_belief is None:
        d0 = float(data.values[0]) if data.n_obs else 0.0
        meas_var = data.variance if data.n_obs else 1.0
        init_belief = initial_belief(model, values, d0, meas_var, vel_std, stiff_std)
    if init_belief.dim != model.layout.n_state:
        raise ValueError(f"initial belief dimension {init_belief.dim} does not match {model.id}")

    core = backend.get_core(backend_name)
    log_lik, diverged_at, innovations, mean_f, cov_f, mean_a, cov_a = core(
        int(model.family), model.pack_coeffs(values), float(grid_dt), int(n_steps),
        float(t0), obs_idx, np.ascontiguousarray(data.values, dtype=float),
        float(data.variance) if data.n_obs else 1.0,
        np.ascontiguousarray(init_belief.mean, dtype=float),
        np.ascontiguousarray(init_belief.cov, dtype=float), bool(store_beliefs))

    return FilterResult(
        log_lik=float(log_lik),
        grid_times=t0 + grid_dt * np.arange(n_steps + 1),
        obs_indices=obs_idx,
        innovations=innovations,
        mean_forecast=mean_f, cov_forecast=cov_f,
        mean_analysis=mean_a, cov_analysis=cov_a,
        diverged_at=None if diverged_at < 0 else int(diverged_at),
    )


def log_likelihood(model: models.CandidateModel, theta, data: ObservationSeries,
                   grid_dt: float = DEFAULT_GRID_DT, **kwargs) -> float:
    """Data log-likelihood of ``theta`` (belief trajectories not stored)."""
    return run_filter(model, theta, data, grid_dt, store_beliefs=False, **kwargs).log_lik


def likelihood_fn(model: models.CandidateModel, data: ObservationSeries,
                  grid_dt: float = DEFAULT_GRID_DT, *, horizon: float | None = None,
                  vel_std: float = DEFAULT_VEL_STD, stiff_std: float = DEFAULT_STIFF_STD,
                  backend_name: str | None = None):
    """Build the fast ``values -> log_lik`` map used by the sampler.

    Grid construction and observation alignment are done once up front;
    each call only packs coefficients, builds the initial belief and runs
    the filter core.  The returned function is pure and thread-safe.
    """
    if data.n_obs == 0:
        raise ValueError("cannot build a likelihood from an empty observation series")
    if data.variance <= 0.0:
        raise ValueError("filtering observations requires noise_std > 0")
    if horizon is None:
        horizon = float(data.times[-1])
    n_steps = round(horizon / grid_dt)
    obs_idx = _grid_indices(data.times, grid_dt, 0.0, n_steps)
    obs_vals = np.ascontiguousarray(data.values, dtype=float)
    meas_var = data.variance
    d0 = float(data.values[0])
    core = backend.get_core(backend_name)
    family = int(model.family)
    dt = float(grid_dt)

    def loglik(values) -> float:
        values = np.asarray(values, dtype=float)
        coeffs = model.pack_coeffs(values)
        mean0, cov0 = models.initial_belief_arrays(model, values, d0, meas_var,
                                                   vel_std, stiff_std)
        out = core(family, coeffs, dt, n_steps, 0.0, obs_idx, obs_vals, meas_var,
                   mean0, cov0, False)
        return float(out[0])

    return loglik


def trajectory_at(theta, model: models.CandidateModel, data: ObservationSeries,
                  grid_dt: float = DEFAULT_GRID_DT, slot: str | None = None,
                  **kwargs) -> np.ndarray:
    """Filtered mean +/- 3 sigma band for one state slot at fixed parameters.

    ``slot`` names a state component ("stiffness" requires one of the
    stiffness-walk candidates); by default the stiffness band is produced
    when the model has one, the displacement band otherwise.  Returns rows
    (t, mean, mean-3*std, mean+3*std), one per grid point, taken from the
    post-analysis beliefs.
    """
    if slot is None:
        slot = "stiffness" if model.has_stiffness_state else "displacement"
    if slot not in model.layout.names:
        raise ValueError(f"unknown state slot {slot!r} for {model.id}; "
                         f"expected one of {model.layout.names}")
    i = model.layout.names.index(slot)
    result = run_filter(model, theta, data, grid_dt, store_beliefs=True, **kwargs)
    if result.diverged_at is not None:
        raise FilterDivergedError(f"filter diverged at grid index {result.diverged_at}")
    mean = result.mean_analysis[:, i]
    spread = 3.0 * np.sqrt(np.maximum(result.cov_analysis[:, i, i], 0.0))
    return np.column_stack([result.grid_times, mean, mean - spread, mean + spread])


def save_band_csv(path, band: np.ndarray) -> None:
    """Write a trajectory band as CSV with header t,mean,lo3,hi3."""
    _write_csv(path, ("t", "mean", "lo3", "hi3"), band)


def save_innovations_csv(path, times: np.ndarray, innovations: np.ndarray) -> None:
    """Write per-observation innovations as CSV with header t,residual,variance."""
    rows = np.column_stack([times, innovations])
    _write_csv(path, ("t", "residual", "variance"), rows)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in np.asarray(rows):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")

import math

import numpy as np
import pytest

import _oracles
from stiffcal import filtering, models
from stiffcal.filtering import (FilterBreakdownError, FilterDivergedError,
                                GaussianBelief, GridMismatchError, ObservationSeries,
                                analyze, forecast, likelihood_fn, log_likelihood,
                                run_filter, trajectory_at)
from stiffcal.models import get_model


def _m2():
    model = get_model("M2")
    return model, model.make_params(k=80.0, c=0.1, sigma=50.0)


# ---------------------------------------------------------------- forecast

def test_forecast_from_zero_covariance_is_pure_process_noise():
    model, theta = _m2()
    belief = GaussianBelief([50.0, 0.0], np.zeros((2, 2)))
    out = forecast(belief, model, theta, 0.004)
    B = models.jacobian_noise(model, belief.mean, theta, 0.004)
    np.testing.assert_allclose(out.cov, B @ B.T, atol=1e-14)


def test_forecast_stiffness_slot_gains_walk_variance():
    model = get_model("M4a")
    theta = model.make_params(c=0.1, sigma=50.0)
    P = np.diag([1.0, 2.0, 3.0])
    out = forecast(GaussianBelief([50.0, 0.0, 80.0], P), model, theta, 0.004)
    assert out.cov[2, 2] == pytest.approx(3.0 + 0.004 * 1.0 ** 2, rel=1e-12)


def test_forecast_rejects_nonfinite():
    model = get_model("M3")
    theta = model.make_params(k=80.0, c=0.1, sigma=50.0, tau=0.0)  # 1 - dt/tau blows up
    with pytest.raises(FilterDivergedError):
        forecast(GaussianBelief(np.zeros(3), np.eye(3)), model, theta, 0.004)


# ---------------------------------------------------------------- analysis

def test_analyze_scalar_gain_half():
    belief, inc = analyze(GaussianBelief([0.0], [[1.0]]), None, d=2.0, meas_var=1.0)
    assert belief.mean[0] == pytest.approx(1.0)
    assert belief.cov[0, 0] == pytest.approx(0.5)
    del inc


def test_analyze_scalar_standard_normal_density():
    _, inc = analyze(GaussianBelief([0.0], [[0.0]]), None, d=0.0, meas_var=1.0)
    assert inc == pytest.approx(-0.5 * math.log(2.0 * math.pi))


def test_analyze_never_inflates_observed_variance():
    rng = np.random.default_rng(5)
    for _ in range(20):
        A = rng.standard_normal((3, 3))
        P = A @ A.T + 1e-6 * np.eye(3)
        belief = GaussianBelief(rng.standard_normal(3), P)
        updated, _ = analyze(belief, None, d=rng.standard_normal(), meas_var=2.0)
        assert updated.cov[0, 0] <= P[0, 0] + 1e-12


def test_analyze_breakdown_and_validation():
    with pytest.raises(ValueError):
        analyze(GaussianBelief([0.0], [[1.0]]), None, d=0.0, meas_var=0.0)
    with pytest.raises(FilterBreakdownError):
        analyze(GaussianBelief([0.0], [[-5.0]]), None, d=0.0, meas_var=1.0)


# ---------------------------------------------------------------- run_filter

def test_empty_series_gives_zero_loglik_and_pure_forecasts():
    model, theta = _m2()
    data = ObservationSeries(np.array([]), np.array([]), 10.0)
    result = run_filter(model, theta, data, 0.004, horizon=1.0)
    assert result.log_lik == 0.0
    assert result.grid_times.size == 251
    assert result.mean_forecast.shape == (251, 2)
    np.testing.assert_array_equal(result.mean_forecast, result.mean_analysis)
    np.testing.assert_array_equal(result.cov_forecast, result.cov_analysis)


def test_loglik_is_sum_of_innovation_densities(m2_selfgen_data):
    theta, data = m2_selfgen_data
    model = get_model("M2")
    result = run_filter(model, theta, data, 0.004)
    r, S = result.innovations[:, 0], result.innovations[:, 1]
    recomputed = float(np.sum(-0.5 * (np.log(2.0 * math.pi * S) + r * r / S)))
    assert result.log_lik == pytest.approx(recomputed, abs=1e-9)
    assert result.innovations.shape == (data.n_obs, 2)


@pytest.mark.parametrize("model_id", ["M1", "M2", "M3"])
def test_linear_filters_match_independent_kalman(model_id, case1_dataset):
    """The Jacobian-based filter is algebraically the plain KF on the
    linear candidates."""
    data = case1_dataset.observations
    model = get_model(model_id)
    theta_by_id = {
        "M1": {"k1": 70.0, "k2": 10.0, "t_s": 10.0, "c": 0.1, "sigma": 50.0},
        "M2": {"k": 80.0, "c": 0.1, "sigma": 50.0},
        "M3": {"k": 80.0, "c": 0.1, "sigma": 50.0, "tau": 2.0},
    }
    theta = model.make_params(**theta_by_id[model_id])
    dt = 0.004
    result = run_filter(model, theta, data, dt)

    # independent textbook KF over explicit matrices
    def step_matrix(t):
        if model_id == "M1":
            K = 80.0 if t < 10.0 else 70.0
            return np.array([[1.0, dt], [-dt * K, 1.0 - dt * 0.1]])
        if model_id == "M2":
            return np.array([[1.0, dt], [-dt * 80.0, 1.0 - dt * 0.1]])
        return np.array([[1.0, dt, 0.0],
                         [-dt * 80.0, 1.0 - dt * 0.1, dt],
                         [0.0, 0.0, 1.0 - dt / 2.0]])

    n = model.layout.n_state
    Qd = np.zeros((n, n))
    Qd[-1, -1] = dt * 50.0 ** 2
    x0 = np.zeros(n)
    x0[0] = data.values[0]
    P0 = np.diag([100.0, 2500.0, 50.0 ** 2 * 2.0 / 2.0][:n])
    obs_idx = np.round(data.times / dt).astype(int)
    ref_ll, ref_mean = _oracles.kalman_loglik(step_matrix, Qd, x0, P0,
                                              round(20.0 / dt), dt, obs_idx,
                                              data.values, 100.0)
    assert abs(result.log_lik - ref_ll) < 1e-9
    np.testing.assert_allclose(result.mean_analysis[-1], ref_mean, atol=1e-9)


def test_innovations_white_on_self_generated_data(m2_selfgen_data):
    theta, data = m2_selfgen_data
    result = run_filter(get_model("M2"), theta, data, 0.004)
    e = result.innovations[:, 0] / np.sqrt(result.innovations[:, 1])
    lag1 = np.corrcoef(e[:-1], e[1:])[0, 1]
    assert abs(lag1) < 0.1


@pytest.mark.parametrize("model_id", ["M1", "M2"])
def test_loglik_additivity_across_a_split(model_id, case1_dataset):
    data = case1_dataset.observations
    model = get_model(model_id)
    theta = {"M1": dict(k1=70.0, k2=10.0, t_s=10.0, c=0.1, sigma=50.0),
             "M2": dict(k=80.0, c=0.1, sigma=50.0)}[model_id]
    theta = model.make_params(**theta)
    dt = 0.004
    full = run_filter(model, theta, data, dt)

    split_t = 10.0
    first = ObservationSeries(data.times[data.times <= split_t],
                              data.values[data.times <= split_t], data.noise_std)
    second = ObservationSeries(data.times[data.times > split_t],
                               data.values[data.times > split_t], data.noise_std)
    res1 = run_filter(model, theta, first, dt)
    carried = res1.analysis_belief(res1.grid_times.size - 1)
    res2 = run_filter(model, theta, second, dt, t0=split_t, horizon=10.0,
                      init_belief=carried)
    assert res1.log_lik + res2.log_lik == pytest.approx(full.log_lik, abs=1e-10)


def test_covariance_symmetry_along_the_run(m2_selfgen_data):
    theta, data = m2_selfgen_data
    result = run_filter(get_model("M2"), theta, data, 0.004)
    for covs in (result.cov_forecast, result.cov_analysis):
        asym = np.abs(covs - covs.transpose(0, 2, 1)).max()
        assert asym < 1e-12


def test_analysis_never_inflates_observed_variance_along_run(m2_selfgen_data):
    theta, data = m2_selfgen_data
    result = run_filter(get_model("M2"), theta, data, 0.004)
    obs = result.obs_indices
    assert np.all(result.cov_analysis[obs, 0, 0] <= result.cov_forecast[obs, 0, 0] + 1e-12)


def test_grid_refinement_reduces_loglik_change(case1_dataset):
    model, theta = _m2()
    data = case1_dataset.observations
    lls = {dt: log_likelihood(model, theta, data, dt) for dt in (0.008, 0.004, 0.002)}
    d1 = abs(lls[0.008] - lls[0.004])
    d2 = abs(lls[0.004] - lls[0.002])
    assert d1 / d2 >= 1.5


def test_observation_times_must_sit_on_grid():
    model, theta = _m2()
    data = ObservationSeries([0.0, 0.0415], [1.0, 2.0], 10.0)
    with pytest.raises(GridMismatchError):
        run_filter(model, theta, data, 0.004)
    finer_than_grid = ObservationSeries([0.0, 0.004, 0.008], [1.0, 2.0, 1.0], 10.0)
    run_filter(model, theta, finer_than_grid, 0.004)  # exactly on-grid is fine
    with pytest.raises(GridMismatchError):
        run_filter(model, theta, finer_than_grid, 0.008)


def test_diverged_filter_reports_minus_inf_instead_of_raising(case1_dataset):
    model = get_model("M3")
    theta = model.make_params(k=80.0, c=0.1, sigma=50.0, tau=0.0)
    result = run_filter(model, theta, case1_dataset.observations, 0.004)
    assert result.log_lik == -math.inf
    assert result.diverged_at is not None


def test_likelihood_fn_matches_run_filter(case1_dataset):
    model, theta = _m2()
    data = case1_dataset.observations
    fast = likelihood_fn(model, data, 0.004)
    assert fast(theta.values) == run_filter(model, theta, data, 0.004).log_lik


# ---------------------------------------------------------------- trajectories

def test_trajectory_band_halfwidth_is_three_sigma(m2_selfgen_data):
    theta, data = m2_selfgen_data
    model = get_model("M2")
    band = trajectory_at(theta, model, data, 0.004, slot="displacement")
    result = run_filter(model, theta, data, 0.004)
    np.testing.assert_allclose(band[:, 3] - band[:, 1],
                               3.0 * np.sqrt(result.cov_analysis[:, 0, 0]), atol=1e-10)
    np.testing.assert_allclose(band[:, 1] - band[:, 2], band[:, 3] - band[:, 1])


def test_trajectory_unknown_slot_rejected(case1_dataset):
    model, theta = _m2()
    with pytest.raises(ValueError, match="slot"):
        trajectory_at(theta, model, case1_dataset.observations, slot="stiffness")


def test_stiffness_band_constant_in_zero_walk_limit(case1_dataset):
    # gamma -> 0 with a pinned initial stiffness (zero spread): no stiffness
    # dynamics at all, so the band stays at the initial mean with zero width.
    model = get_model("M5")
    theta = model.make_params(c=0.34, sigma=60.0, gamma=0.0)
    band = trajectory_at(theta, model, case1_dataset.observations, 0.004,
                         stiff_std=0.0)
    assert np.allclose(band[:, 1], 80.0, atol=1e-9)
    assert np.allclose(band[:, 3] - band[:, 2], 0.0, atol=1e-9)


def test_stiffness_band_tracks_large_drop():
    # well-chosen static parameters on a large-drop dataset: the filtered
    # stiffness should end near the damaged truth value of 10 N/mm
    from stiffcal import experiments
    dataset = experiments.generate_dataset(experiments.case_config(2, seed=11))
    model = get_model("M5")
    theta = model.make_params(c=0.3, sigma=60.0, gamma=30.0)
    band = trajectory_at(theta, model, dataset.observations, 0.004)
    assert 5.0 <= band[-1, 1] <= 15.0


def test_csv_exports(tmp_path, m2_selfgen_data):
    theta, data = m2_selfgen_data
    model = get_model("M2")
    band = trajectory_at(theta, model, data, 0.004, slot="displacement")
    result = run_filter(model, theta, data, 0.004)
    band_path = tmp_path / "band.csv"
    innov_path = tmp_path / "innov.csv"
    filtering.save_band_csv(band_path, band)
    filtering.save_innovations_csv(innov_path, data.times, result.innovations)
    assert band_path.read_text().splitlines()[0] == "t,mean,lo3,hi3"
    assert innov_path.read_text().splitlines()[0] == "t,residual,variance"
    reloaded = np.loadtxt(band_path, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(reloaded, band)


# ---------------------------------------------------------------- series type

def test_observation_series_validation():
    with pytest.raises(ValueError):
        ObservationSeries([0.0, 0.0], [1.0, 2.0], 10.0)     # not increasing
    with pytest.raises(ValueError):
        ObservationSeries([0.0, 1.0], [1.0, math.inf], 10.0)
    with pytest.raises(ValueError):
        ObservationSeries([0.0, 1.0], [1.0, 2.0], -1.0)
    noise_free = ObservationSeries([0.0, 1.0], [1.0, 2.0], 0.0)  # allowed for data
    model, theta = _m2()
    with pytest.raises(ValueError):
        run_filter(model, theta, noise_free, 0.5)  # but not filterable

"""Candidate state-space models for a stiffness-degrading oscillator.

All candidates share a mass-spring-damper backbone ``m*u'' + c*u' + K(t)*u =
f(t)`` discretized with one-step Euler-Maruyama, but differ in how the
overall stiffness and the random forcing are treated:

* ``M1``  - stiffness is a pre/post-failure step in time; white noise forcing;
  every parameter is static.
* ``M2``  - constant stiffness, white noise forcing.
* ``M3``  - constant stiffness, Ornstein-Uhlenbeck (colored) forcing carried
  as a third state.
* ``M4a``/``M4b`` - stiffness appended to the state as a random walk with a
  fixed walk strength (1 and 10 N/mm per sqrt(s) respectively).
* ``M5``  - like M4 but the walk strength ``gamma`` is a free static
  parameter.
* ``M6``  - like M5 with the initial stiffness mean ``k0`` also free.

Every operation is a pure function of its arguments; noise enters only
through explicitly supplied unit-Gaussian draws.  Models are immutable and
safe to share between threads.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

# Mass of the oscillator (kg).  Known a priori, never estimated.
MASS = 1.0

MODEL_IDS = ("M1", "M2", "M3", "M4a", "M4b", "M5", "M6")


class Family(enum.IntEnum):
    """Structural family of a candidate; shared with the filter kernels."""

    STEP_STIFFNESS = 1      # 2 states, stiffness steps down at t_s
    CONSTANT_STIFFNESS = 2  # 2 states, constant stiffness
    OU_FORCING = 3          # 3 states, third state is the colored forcing
    STIFFNESS_WALK = 4      # 3 states, third state is the stiffness


@dataclass(frozen=True)
class ParamVector:
    """Named, ordered static-parameter values.

    The order is fixed per model and defines the coordinates of the
    sampling space.
    """

    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", values)
        if values.ndim != 1 or len(self.names) != values.size:
            raise ValueError("names and values must be 1-d and equal length")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate parameter names in {self.names}")
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter values must be finite")

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def as_dict(self) -> dict[str, float]:
        return {n: float(v) for n, v in zip(self.names, self.values)}


@dataclass(frozen=True)
class PriorSpec:
    """Independent uniform box prior over the static parameters."""

    names: tuple[str, ...]
    lows: np.ndarray
    highs: np.ndarray

    def __post_init__(self):
        lows = np.array(self.lows, dtype=float)
        highs = np.array(self.highs, dtype=float)
        lows.setflags(write=False)
        highs.setflags(write=False)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "lows", lows)
        object.__setattr__(self, "highs", highs)
        if not (lows.shape == highs.shape == (len(self.names),)):
            raise ValueError("prior bounds must match parameter names")
        if not np.all(lows < highs):
            raise ValueError("every prior interval needs lo < hi")

    @classmethod
    def from_bounds(cls, bounds: dict[str, tuple[float, float]]) -> "PriorSpec":
        names = tuple(bounds)
        lows = np.array([bounds[n][0] for n in names], dtype=float)
        highs = np.array([bounds[n][1] for n in names], dtype=float)
        return cls(names, lows, highs)

    @property
    def dim(self) -> int:
        return len(self.names)

    def contains(self, values) -> bool:
        v = np.asarray(values, dtype=float)
        return bool(np.all(v >= self.lows) and np.all(v <= self.highs))

    def log_density(self, values) -> float:
        if not self.contains(values):
            return -math.inf
        return -float(np.sum(np.log(self.highs - self.lows)))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lows, self.highs)


@dataclass(frozen=True)
class StateLayout:
    """Dimensions and slot names of the (possibly augmented) state."""

    names: tuple[str, ...]
    n_noise: int

    @property
    def n_state(self) -> int:
        return len(self.names)


@dataclass(frozen=True)
class StiffnessSchedule:
    """Time profile of the overall stiffness K(t) in N/mm.

    ``step`` drops from k1+k2 to k1 at t_s (the damaged branch applies for
    t >= t_s); ``linear`` decays from k1+k2 at t=0 to k1 at t=ramp_end.
    """

    kind: str
    k1: float
    k2: float = 0.0
    t_s: float = 0.0
    ramp_end: float = 20.0

    def __post_init__(self):
        if self.kind not in ("constant", "step", "linear"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")


def eval_stiffness(schedule: StiffnessSchedule, t: float) -> float:
    """Overall stiffness at time ``t`` (total function, no failure modes)."""
    if schedule.kind == "constant":
        return schedule.k1
    if schedule.kind == "step":
        return schedule.k1 + schedule.k2 if t < schedule.t_s else schedule.k1
    return schedule.k1 + schedule.k2 * (1.0 - t / schedule.ramp_end)


@dataclass(frozen=True)
class CandidateModel:
    """One calibration candidate: layout, prior and fixed settings.

    ``fixed_walk_strength`` pins ``gamma`` for M4a/M4b; ``fixed_init_stiffness``
    pins the initial stiffness mean for M4a/M4b/M5 (M6 estimates it, M1-M3
    carry no stiffness state).
    """

    id: str
    family: Family
    layout: StateLayout
    prior: PriorSpec
    fixed_walk_strength: float | None = None
    fixed_init_stiffness: float | None = None

    @property
    def param_names(self) -> tuple[str, ...]:
        return self.prior.names

    @property
    def n_params(self) -> int:
        return self.prior.dim

    @property
    def has_stiffness_state(self) -> bool:
        return self.family == Family.STIFFNESS_WALK

    def make_params(self, **values: float) -> ParamVector:
        missing = set(self.param_names) - set(values)
        extra = set(values) - set(self.param_names)
        if missing or extra:
            raise ValueError(f"expected exactly {self.param_names}, got {sorted(values)}")
        return ParamVector(self.param_names, [values[n] for n in self.param_names])

    def param_values(self, theta) -> np.ndarray:
        """Coerce a ParamVector or raw array into this model's coordinate order."""
        if isinstance(theta, ParamVector):
            if theta.names != self.param_names:
                raise ValueError(f"parameter names {theta.names} do not match {self.param_names}")
            return theta.values
        values = np.asarray(theta, dtype=float)
        if values.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters for {self.id}, got shape {values.shape}")
        return values

    def pack_coeffs(self, theta) -> np.ndarray:
        """Pack physical coefficients for the filter kernels.

        Layout is a fixed-width vector [m, c, sigma, a, b, e] whose tail is
        interpreted per family: step -> (k1, k2, t_s); constant -> (k,);
        OU forcing -> (k, tau); stiffness walk -> (gamma,).
        """
        v = self.param_values(theta)
        coeffs = np.zeros(6)
        coeffs[0] = MASS
        names = self.param_names
        coeffs[1] = v[names.index("c")]
        coeffs[2] = v[names.index("sigma")]
        if self.family == Family.STEP_STIFFNESS:
            coeffs[3] = v[names.index("k1")]
            coeffs[4] = v[names.index("k2")]
            coeffs[5] = v[names.index("t_s")]
        elif self.family == Family.CONSTANT_STIFFNESS:
            coeffs[3] = v[names.index("k")]
        elif self.family == Family.OU_FORCING:
            coeffs[3] = v[names.index("k")]
            coeffs[4] = v[names.index("tau")]
        else:
            if self.fixed_walk_strength is not None:
                coeffs[3] = self.fixed_walk_strength
            else:
                coeffs[3] = v[names.index("gamma")]
        return coeffs

    def init_stiffness_mean(self, theta) -> float:
        if not self.has_stiffness_state:
            raise ValueError(f"{self.id} has no stiffness state")
        if self.fixed_init_stiffness is not None:
            return self.fixed_init_stiffness
        v = self.param_values(theta)
        return float(v[self.param_names.index("k0")])


_LAYOUT_2 = StateLayout(("displacement", "velocity"), n_noise=1)
_LAYOUT_OU = StateLayout(("displacement", "velocity", "forcing"), n_noise=1)
_LAYOUT_WALK = StateLayout(("displacement", "velocity", "stiffness"), n_noise=2)

_STIFFNESS_RANGE = (0.0, 1000.0)
_DAMPING_RANGE = (0.0, 5.0)
_FORCING_RANGE = (0.0, 1000.0)
_WALK_RANGE = (0.0, 1000.0)
_INIT_STIFF_RANGE = (0.0, 100.0)
_SNAP_TIME_RANGE = (0.0, 20.0)
_RELAXATION_RANGE = (0.0, 10.0)


def get_model(model_id: str, init_stiffness: float = 80.0) -> CandidateModel:
    """Look up a candidate by id ("M1".."M6").

    ``init_stiffness`` selects the assumed initial stiffness mean for
    M4a/M4b/M5 (80 is the nominal value, 60 the deliberately wrong one);
    it is ignored for the other candidates.
    """
    if model_id == "M1":
        prior = PriorSpec.from_bounds({
            "k1": _STIFFNESS_RANGE, "k2": _STIFFNESS_RANGE, "t_s": _SNAP_TIME_RANGE,
            "c": _DAMPING_RANGE, "sigma": _FORCING_RANGE,
        })
        return CandidateModel("M1", Family.STEP_STIFFNESS, _LAYOUT_2, prior)
    if model_id == "M2":
        prior = PriorSpec.from_bounds({
            "k": _STIFFNESS_RANGE, "c": _DAMPING_RANGE, "sigma": _FORCING_RANGE,
        })
        return CandidateModel("M2", Family.CONSTANT_STIFFNESS, _LAYOUT_2, prior)
    if model_id == "M3":
        prior = PriorSpec.from_bounds({
            "k": _STIFFNESS_RANGE, "c": _DAMPING_RANGE, "sigma": _FORCING_RANGE,
            "tau": _RELAXATION_RANGE,
        })
        return CandidateModel("M3", Family.OU_FORCING, _LAYOUT_OU, prior)
    if model_id in ("M4a", "M4b"):
        prior = PriorSpec.from_bounds({"c": _DAMPING_RANGE, "sigma": _FORCING_RANGE})
        gamma = 1.0 if model_id == "M4a" else 10.0
        return CandidateModel(model_id, Family.STIFFNESS_WALK, _LAYOUT_WALK, prior,
                              fixed_walk_strength=gamma, fixed_init_stiffness=init_stiffness)
    if model_id == "M5":
        prior = PriorSpec.from_bounds({
            "c": _DAMPING_RANGE, "sigma": _FORCING_RANGE, "gamma": _WALK_RANGE,
        })
        return CandidateModel("M5", Family.STIFFNESS_WALK, _LAYOUT_WALK, prior,
                              fixed_init_stiffness=init_stiffness)
    if model_id == "M6":
        prior = PriorSpec.from_bounds({
            "k0": _INIT_STIFF_RANGE, "c": _DAMPING_RANGE, "sigma": _FORCING_RANGE,
            "gamma": _WALK_RANGE,
        })
        return CandidateModel("M6", Family.STIFFNESS_WALK, _LAYOUT_WALK, prior)
    raise KeyError(f"unknown model id {model_id!r}; expected one of {MODEL_IDS}")


# --------------------------------------------------------------------------
# Family-level maps over packed coefficients.  These are the single source
# of truth for the dynamics; the public operations below and the
# pure-Python filter kernel both dispatch here, and the compiled kernel
# mirrors them line for line.

def _family_mean(family: int, coeffs, x, dt: float, t: float) -> np.ndarray:
    """Deterministic part of the one-step map (noise draws set to zero)."""
    m, c = coeffs[0], coeffs[1]
    a22 = 1.0 - dt * c / m
    u, v = x[0], x[1]
    if family == Family.STEP_STIFFNESS:
        k = coeffs[3] + coeffs[4] if t < coeffs[5] else coeffs[3]
        return np.array([u + dt * v, (-(dt / m) * u) * k + a22 * v])
    if family == Family.CONSTANT_STIFFNESS:
        k = coeffs[3]
        return np.array([u + dt * v, (-(dt / m) * u) * k + a22 * v])
    if family == Family.OU_FORCING:
        k, tau = coeffs[3], coeffs[4]
        decay = 1.0 - dt / tau if tau != 0.0 else -math.inf
        f = x[2]
        return np.array([u + dt * v,
                         (-(dt / m) * u) * k + a22 * v + (dt / m) * f,
                         decay * f])
    if family == Family.STIFFNESS_WALK:
        kx = x[2]
        return np.array([u + dt * v, (-(dt / m) * u) * kx + a22 * v, kx])
    raise ValueError(f"unknown family {family}")


def _family_jac_state(family: int, coeffs, x, dt: float, t: float) -> np.ndarray:
    m, c = coeffs[0], coeffs[1]
    a22 = 1.0 - dt * c / m
    if family == Family.STEP_STIFFNESS:
        k = coeffs[3] + coeffs[4] if t < coeffs[5] else coeffs[3]
        return np.array([[1.0, dt], [-(dt / m) * k, a22]])
    if family == Family.CONSTANT_STIFFNESS:
        return np.array([[1.0, dt], [-(dt / m) * coeffs[3], a22]])
    if family == Family.OU_FORCING:
        tau = coeffs[4]
        decay = 1.0 - dt / tau if tau != 0.0 else -math.inf
        return np.array([[1.0, dt, 0.0],
                         [-(dt / m) * coeffs[3], a22, dt / m],
                         [0.0, 0.0, decay]])
    if family == Family.STIFFNESS_WALK:
        return np.array([[1.0, dt, 0.0],
                         [-(dt / m) * x[2], a22, -(dt / m) * x[0]],
                         [0.0, 0.0, 1.0]])
    raise ValueError(f"unknown family {family}")


def _family_jac_noise(family: int, coeffs, dt: float) -> np.ndarray:
    m, sigma = coeffs[0], coeffs[2]
    sq = math.sqrt(dt)
    if family in (Family.STEP_STIFFNESS, Family.CONSTANT_STIFFNESS):
        return np.array([[0.0], [sq * sigma]])
    if family == Family.OU_FORCING:
        return np.array([[0.0], [0.0], [sq * sigma]])
    if family == Family.STIFFNESS_WALK:
        gamma = coeffs[3]
        return np.array([[0.0, 0.0], [sq * sigma / m, 0.0], [0.0, sq * gamma]])
    raise ValueError(f"unknown family {family}")


# --------------------------------------------------------------------------
# Public operations.

def step_state(model: CandidateModel, x, theta, dt: float, xi, t: float = 0.0) -> np.ndarray:
    """Advance the state one Euler-Maruyama step of size ``dt``.

    ``xi`` holds the unit-Gaussian driver draws for this step (length
    ``model.layout.n_noise``); ``t`` is the absolute time of the current
    state (only M1's step schedule depends on it).
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if x.shape != (model.layout.n_state,):
        raise ValueError(f"state must have shape ({model.layout.n_state},), got {x.shape}")
    if xi.shape != (model.layout.n_noise,):
        raise ValueError(f"noise must have shape ({model.layout.n_noise},), got {xi.shape}")
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    coeffs = model.pack_coeffs(theta)
    mean = _family_mean(model.family, coeffs, x, dt, t)
    return mean + _family_jac_noise(model.family, coeffs, dt) @ xi


def jacobian_state(model: CandidateModel, x, theta, dt: float, t: float = 0.0) -> np.ndarray:
    """Jacobian of the deterministic one-step map with respect to the state."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.layout.n_state,):
        raise ValueError(f"state must have shape ({model.layout.n_state},), got {x.shape}")
    return _family_jac_state(model.family, model.pack_coeffs(theta), x, dt, t)


def jacobian_noise(model: CandidateModel, x, theta, dt: float) -> np.ndarray:
    """Jacobian of the one-step map with respect to the unit-Gaussian drivers."""
    return _family_jac_noise(model.family, model.pack_coeffs(theta), dt)


def measure(x) -> float:
    """Measurement map: the observed quantity is the displacement slot."""
    return float(np.asarray(x, dtype=float)[0])


def jacobian_meas(model: CandidateModel) -> tuple[np.ndarray, float]:
    """Measurement Jacobians: row matrix C (picks the displacement) and the
    scalar gain D on the additive sensor noise."""
    C = np.zeros((1, model.layout.n_state))
    C[0, 0] = 1.0
    return C, 1.0


def log_prior(theta, prior: PriorSpec) -> float:
    """Box-uniform log density; -inf outside the support, never an exception."""
    values = theta.values if isinstance(theta, ParamVector) else np.asarray(theta, dtype=float)
    if values.shape != (prior.dim,):
        raise ValueError(f"expected {prior.dim} parameters, got shape {values.shape}")
    return prior.log_density(values)


def sample_prior(prior: PriorSpec, rng: np.random.Generator) -> ParamVector:
    """Draw each coordinate independently uniform over its prior interval."""
    return ParamVector(prior.names, prior.sample(rng))


def simulate_path(model: CandidateModel, x0, theta, dt: float, noise, t0: float = 0.0) -> np.ndarray:
    """Iterate ``step_state`` over a (n_steps, n_noise) array of driver draws.

    Returns the trajectory including the initial state, shape
    (n_steps+1, n_state).
    """
    noise = np.asarray(noise, dtype=float)
    if noise.ndim != 2 or noise.shape[1] != model.layout.n_noise:
        raise ValueError(f"noise must have shape (n, {model.layout.n_noise})")
    coeffs = model.pack_coeffs(theta)
    B = _family_jac_noise(model.family, coeffs, dt)
    path = np.empty((noise.shape[0] + 1, model.layout.n_state))
    x = np.asarray(x0, dtype=float)
    if x.shape != (model.layout.n_state,):
        raise ValueError(f"state must have shape ({model.layout.n_state},), got {x.shape}")
    path[0] = x
    for k in range(noise.shape[0]):
        x = _family_mean(model.family, coeffs, x, dt, t0 + k * dt) + B @ noise[k]
        path[k + 1] = x
    return path


def fd_jacobian_state(model: CandidateModel, x, theta, dt: float, t: float = 0.0,
                      rel_step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of the deterministic map.  Testing aid
    only; the filters always use the analytic Jacobians."""
    x = np.asarray(x, dtype=float)
    n = x.size
    zero = np.zeros(model.layout.n_noise)
    J = np.empty((n, n))
    for i in range(n):
        h = rel_step * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (step_state(model, xp, theta, dt, zero, t)
                   - step_state(model, xm, theta, dt, zero, t)) / (2.0 * h)
    return J


def fd_jacobian_noise(model: CandidateModel, x, theta, dt: float, t: float = 0.0,
                      step: float = 1e-6) -> np.ndarray:
    """Central-difference sensitivity to the unit-Gaussian drivers."""
    x = np.asarray(x, dtype=float)
    n_noise = model.layout.n_noise
    J = np.empty((model.layout.n_state, n_noise))
    for i in range(n_noise):
        xp, xm = np.zeros(n_noise), np.zeros(n_noise)
        xp[i] += step
        xm[i] -= step
        J[:, i] = (step_state(model, x, theta, dt, xp, t)
                   - step_state(model, x, theta, dt, xm, t)) / (2.0 * step)
    return J


def initial_belief_arrays(model: CandidateModel, theta, d0: float, meas_var: float,
                          vel_std: float = 50.0, stiff_std: float = 25.0):
    """Initial filter belief (mean, cov) for a calibration run.

    The displacement mean is anchored at the first observation with the
    sensor variance; the velocity gets a broad (0, vel_std^2) slot.  The
    stiffness slot (M4-M6) starts at the assumed/estimated initial mean
    with variance stiff_std^2; the colored-forcing slot (M3) starts at its
    stationary distribution N(0, sigma^2 tau / 2).
    """
    values = model.param_values(theta)
    n = model.layout.n_state
    mean = np.zeros(n)
    mean[0] = d0
    var = np.empty(n)
    var[0] = meas_var
    var[1] = vel_std ** 2
    if model.family == Family.OU_FORCING:
        sigma = values[model.param_names.index("sigma")]
        tau = values[model.param_names.index("tau")]
        var[2] = sigma ** 2 * tau / 2.0
    elif model.family == Family.STIFFNESS_WALK:
        mean[2] = model.init_stiffness_mean(theta)
        var[2] = stiff_std ** 2
    return mean, np.diag(var)

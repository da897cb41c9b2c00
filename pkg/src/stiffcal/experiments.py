"""Synthetic-data generation and calibration campaigns.

Three benchmark scenarios exercise the candidate set against different
kinds of stiffness degradation of the same oscillator (all other truth
parameters shared):

* case 1 - small sudden drop, 80 -> 70 N/mm at t = 10 s;
* case 2 - large sudden drop, 80 -> 10 N/mm at t = 10 s;
* case 3 - gradual linear decay, 80 -> 70 N/mm over the 20 s horizon.

A campaign generates (or loads) the case dataset, calibrates every
requested candidate with the transitional sampler, and assembles an
evidence comparison table with optional renormalized subset rows.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import filtering, models, selection, tmcmc
from .filtering import DEFAULT_GRID_DT, DEFAULT_STIFF_STD, DEFAULT_VEL_STD, ObservationSeries
from .models import MASS, ParamVector, StiffnessSchedule, eval_stiffness
from .selection import EvidenceReport, ModelComparison
from .tmcmc import TmcmcConfig

MAX_SIM_DT = 0.002  # s; forward-Euler stability/accuracy guard for K <= 80, m = 1

CASE_IDS = (1, 2, 3)
_CASE_SETTINGS = {
    1: {"k1": 70.0, "k2": 10.0, "schedule_kind": "step"},
    2: {"k1": 10.0, "k2": 70.0, "schedule_kind": "step"},
    3: {"k1": 70.0, "k2": 10.0, "schedule_kind": "linear"},
}


@dataclass(frozen=True)
class TruthConfig:
    """Data-generating settings (stiffness in N/mm, damping Ns/mm, force N,
    displacement mm, time s)."""

    k1: float
    k2: float
    schedule_kind: str = "step"
    t_s: float = 10.0
    mass: float = MASS
    damping: float = 0.1
    forcing_sigma: float = 50.0
    u0: float = 50.0
    v0: float = 0.0
    horizon: float = 20.0
    sim_dt: float = 0.001
    sample_rate: float = 25.0
    noise_std: float = 10.0
    seed: int = 0

    def schedule(self) -> StiffnessSchedule:
        return StiffnessSchedule(self.schedule_kind, self.k1, self.k2,
                                 t_s=self.t_s, ramp_end=self.horizon)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "TruthConfig":
        return cls(**payload)


def case_config(case_id: int, seed: int = 0, **overrides) -> TruthConfig:
    """Truth settings for one of the three benchmark cases."""
    if case_id not in CASE_IDS:
        raise ValueError(f"case_id must be one of {CASE_IDS}, got {case_id}")
    settings = dict(_CASE_SETTINGS[case_id])
    settings.update(overrides)
    return TruthConfig(seed=seed, **settings)


@dataclass
class Trajectory:
    """Dense truth trajectory from the generating dynamics."""

    times: np.ndarray
    displacement: np.ndarray
    velocity: np.ndarray
    stiffness: np.ndarray


@dataclass
class SyntheticDataset:
    """Noisy subsampled observations plus their provenance.

    ``truth`` is None when the dataset was reloaded from disk (only the
    observations and the config are persisted; the truth regenerates
    deterministically from the config).
    """

    observations: ObservationSeries
    config: TruthConfig
    truth: Trajectory | None = None

    def summary(self) -> dict:
        """Observation count, pre-degradation signal RMS and the
        noise-to-signal variance ratio."""
        cfg = self.config
        cut = cfg.t_s if cfg.schedule_kind == "step" else cfg.horizon
        if self.truth is not None:
            disp = self.truth.displacement[self.truth.times < cut]
        else:
            disp = self.observations.values[self.observations.times < cut]
        rms = float(np.sqrt(np.mean(disp ** 2)))
        return {
            "n_obs": int(self.observations.n_obs),
            "rms_pre_degradation": rms,
            "noise_to_signal_variance_ratio": float(cfg.noise_std ** 2 / rms ** 2),
        }

    def save(self, outdir) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        with open(outdir / "data.csv", "w", encoding="utf-8") as fh:
            fh.write("t,d\n")
            for t, d in zip(self.observations.times, self.observations.values):
                fh.write(f"{float(t)!r},{float(d)!r}\n")
        _dump_json(outdir / "provenance.json", self.config.to_dict())

    @classmethod
    def load(cls, outdir) -> "SyntheticDataset":
        outdir = Path(outdir)
        config = TruthConfig.from_dict(json.loads((outdir / "provenance.json").read_text()))
        rows = np.loadtxt(outdir / "data.csv", delimiter=",", skiprows=1, ndmin=2)
        obs = ObservationSeries(rows[:, 0], rows[:, 1], config.noise_std)
        return cls(observations=obs, config=config, truth=None)


def simulate_truth(cfg: TruthConfig, rng: np.random.Generator) -> Trajectory:
    """Euler-Maruyama integration of the degrading oscillator.

    Steps m*u'' + c*u' + K(t)*u = sigma*W(t) from (u0, v0) over the
    horizon; rejects step sizes beyond the stability guard.
    """
    if cfg.sim_dt > MAX_SIM_DT:
        raise ValueError(f"sim_dt={cfg.sim_dt} is too coarse; the integrator "
                         f"requires sim_dt <= {MAX_SIM_DT}")
    n_steps = round(cfg.horizon / cfg.sim_dt)
    dt = cfg.sim_dt
    schedule = cfg.schedule()
    m, c, sigma = cfg.mass, cfg.damping, cfg.forcing_sigma
    a22 = 1.0 - dt * c / m
    sq = math.sqrt(dt)
    xi = rng.standard_normal(n_steps)

    times = dt * np.arange(n_steps + 1)
    disp = np.empty(n_steps + 1)
    vel = np.empty(n_steps + 1)
    stiff = np.empty(n_steps + 1)
    u, v = cfg.u0, cfg.v0
    for k in range(n_steps):
        t = k * dt
        kt = eval_stiffness(schedule, t)
        disp[k], vel[k], stiff[k] = u, v, kt
        u, v = u + dt * v, (-(dt / m) * u) * kt + a22 * v + sq * sigma * xi[k]
    disp[n_steps], vel[n_steps] = u, v
    stiff[n_steps] = eval_stiffness(schedule, cfg.horizon)
    return Trajectory(times, disp, vel, stiff)


def make_dataset(trajectory: Trajectory, cfg: TruthConfig,
                 rng: np.random.Generator) -> SyntheticDataset:
    """Subsample the truth displacement at the sensor rate and corrupt it
    with additive Gaussian noise."""
    stride = round(1.0 / (cfg.sample_rate * cfg.sim_dt))
    if stride < 1 or abs(stride * cfg.sim_dt * cfg.sample_rate - 1.0) > 1e-9:
        raise ValueError("sample_rate must align with the simulation grid")
    idx = np.arange(0, trajectory.times.size, stride)
    times = np.arange(idx.size) / cfg.sample_rate
    values = trajectory.displacement[idx] + cfg.noise_std * rng.standard_normal(idx.size)
    obs = ObservationSeries(times, values, cfg.noise_std)
    return SyntheticDataset(observations=obs, config=cfg, truth=trajectory)


def generate_dataset(cfg: TruthConfig) -> SyntheticDataset:
    """Deterministic dataset from the config alone (separate substreams for
    the forcing realization and the sensor noise)."""
    sim_rng = tmcmc.substream(cfg.seed, 10)
    obs_rng = tmcmc.substream(cfg.seed, 11)
    return make_dataset(simulate_truth(cfg, sim_rng), cfg, obs_rng)


# --------------------------------------------------------------------------
# Calibration campaigns.

@dataclass(frozen=True)
class ModelLeg:
    """One campaign entry: a candidate plus its assumed initial stiffness."""

    model_id: str
    init_stiffness: float = 80.0

    @property
    def label(self) -> str:
        model = models.get_model(self.model_id, self.init_stiffness)
        if model.fixed_init_stiffness is not None and self.init_stiffness != 80.0:
            return f"{self.model_id}-k{self.init_stiffness:g}"
        return self.model_id


STANDARD_MODEL_IDS = ("M1", "M2", "M3", "M4a", "M4b", "M5", "M6")
ERRONEOUS_INIT_STIFFNESS = 60.0


def standard_legs(include_erroneous: bool = False) -> list[ModelLeg]:
    """The full candidate set; optionally with the wrong-initial-stiffness
    variants of M4a/M4b/M5 appended."""
    legs = [ModelLeg(mid) for mid in STANDARD_MODEL_IDS]
    if include_erroneous:
        legs += [ModelLeg(mid, ERRONEOUS_INIT_STIFFNESS) for mid in ("M4a", "M4b", "M5")]
    return legs


@dataclass
class CalibrationResult:
    """Everything a campaign keeps per candidate (all serializable)."""

    label: str
    model_id: str
    init_stiffness: float
    seed: int
    param_names: tuple[str, ...]
    posterior: np.ndarray
    posterior_log_liks: np.ndarray
    stage_summary: list[dict]
    report: EvidenceReport
    map_params: ParamVector
    trajectory_slot: str
    trajectory: np.ndarray
    innovation_times: np.ndarray
    innovations: np.ndarray
    cj_log_evidence: float | None = None

    def save(self, outdir) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        header = ",".join(self.param_names + ("log_lik",))
        with open(outdir / "posterior.csv", "w", encoding="utf-8") as fh:
            fh.write(header + "\n")
            for row, ll in zip(self.posterior, self.posterior_log_liks):
                fh.write(",".join(repr(float(v)) for v in row) + f",{float(ll)!r}\n")
        _dump_json(outdir / "stages.json", self.stage_summary)
        meta = {
            "label": self.label,
            "model_id": self.model_id,
            "init_stiffness": self.init_stiffness,
            "seed": self.seed,
            "param_names": list(self.param_names),
            "report": self.report.to_dict(),
            "cj_log_evidence": self.cj_log_evidence,
            "map_params": self.map_params.as_dict(),
            "trajectory_slot": self.trajectory_slot,
        }
        _dump_json(outdir / "evidence.json", meta)
        filtering.save_band_csv(outdir / "trajectory.csv", self.trajectory)
        filtering.save_innovations_csv(outdir / "innovations.csv",
                                       self.innovation_times, self.innovations)

    @classmethod
    def load(cls, outdir) -> "CalibrationResult":
        outdir = Path(outdir)
        meta = json.loads((outdir / "evidence.json").read_text())
        names = tuple(meta["param_names"])
        table = np.loadtxt(outdir / "posterior.csv", delimiter=",", skiprows=1, ndmin=2)
        band = np.loadtxt(outdir / "trajectory.csv", delimiter=",", skiprows=1, ndmin=2)
        innov = np.loadtxt(outdir / "innovations.csv", delimiter=",", skiprows=1, ndmin=2)
        report = EvidenceReport(**meta["report"])
        return cls(
            label=meta["label"], model_id=meta["model_id"],
            init_stiffness=meta["init_stiffness"], seed=meta["seed"],
            param_names=names, posterior=table[:, :-1],
            posterior_log_liks=table[:, -1],
            stage_summary=json.loads((outdir / "stages.json").read_text()),
            report=report,
            map_params=ParamVector(names, [meta["map_params"][n] for n in names]),
            trajectory_slot=meta["trajectory_slot"], trajectory=band,
            innovation_times=innov[:, 0], innovations=innov[:, 1:],
            cj_log_evidence=meta["cj_log_evidence"],
        )


def calibrate_model(model: models.CandidateModel, data: ObservationSeries,
                    config: TmcmcConfig, grid_dt: float = DEFAULT_GRID_DT, *,
                    label: str | None = None, map_fn=map, compute_cj: bool = False,
                    vel_std: float = DEFAULT_VEL_STD, stiff_std: float = DEFAULT_STIFF_STD,
                    backend_name: str | None = None) -> CalibrationResult:
    """Calibrate one candidate: sampler run, evidence report, MAP rerun.

    The evidence is the stagewise estimate; ``compute_cj`` adds the
    Chib-Jeliazkov cross-check (one extra batch of filter evaluations).
    """
    loglik = filtering.likelihood_fn(model, data, grid_dt, vel_std=vel_std,
                                     stiff_std=stiff_std, backend_name=backend_name)
    run = tmcmc.run(model.prior.log_density, loglik, model.prior.sample, config,
                    param_names=model.param_names, map_fn=map_fn)
    log_ev = selection.log_evidence_stagewise(run)
    report = selection.occam_decompose(run.posterior_log_liks, log_ev)

    cj = None
    if compute_cj:
        cj = selection.chib_jeliazkov(
            model.prior.log_density, loglik, run.posterior_samples,
            run.posterior_log_liks, run.stages[-2].proposal_cov,
            tmcmc.substream(config.seed, 3))

    log_posts = run.posterior_log_liks + np.array(
        [model.prior.log_density(s) for s in run.posterior_samples])
    map_values = run.posterior_samples[int(np.argmax(log_posts))]
    map_params = ParamVector(model.param_names, map_values)
    slot = "stiffness" if model.has_stiffness_state else "displacement"
    band = filtering.trajectory_at(map_values, model, data, grid_dt, slot=slot,
                                   vel_std=vel_std, stiff_std=stiff_std,
                                   backend_name=backend_name)
    map_result = filtering.run_filter(model, map_values, data, grid_dt,
                                      store_beliefs=False, vel_std=vel_std,
                                      stiff_std=stiff_std, backend_name=backend_name)
    return CalibrationResult(
        label=label or model.id, model_id=model.id,
        init_stiffness=model.fixed_init_stiffness if model.fixed_init_stiffness is not None else 80.0,
        seed=config.seed, param_names=model.param_names,
        posterior=run.posterior_samples, posterior_log_liks=run.posterior_log_liks,
        stage_summary=run.stage_summary(), report=report, map_params=map_params,
        trajectory_slot=slot, trajectory=band,
        innovation_times=np.array(data.times), innovations=map_result.innovations,
        cj_log_evidence=cj,
    )


@dataclass
class CampaignResult:
    """Full multi-model comparison over one dataset."""

    case_id: int
    dataset: SyntheticDataset
    results: list[CalibrationResult]
    comparison: ModelComparison
    failures: dict[str, str] = field(default_factory=dict)

    def result_for(self, label: str) -> CalibrationResult:
        for r in self.results:
            if r.label == label:
                return r
        raise KeyError(f"no calibration result labelled {label!r}")

    def save(self, outdir) -> None:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        self.dataset.save(outdir / "data")
        for result in self.results:
            result.save(outdir / result.label)
        _dump_json(outdir / "comparison.json", self.comparison.to_json_dict())
        (outdir / "comparison.csv").write_text(self.comparison.to_csv_text(),
                                               encoding="utf-8")
        _dump_json(outdir / "campaign.json", {
            "case_id": self.case_id,
            "labels": [r.label for r in self.results],
            "failures": self.failures,
        })

    @classmethod
    def load(cls, outdir) -> "CampaignResult":
        outdir = Path(outdir)
        meta = json.loads((outdir / "campaign.json").read_text())
        dataset = SyntheticDataset.load(outdir / "data")
        results = [CalibrationResult.load(outdir / label) for label in meta["labels"]]
        payload = json.loads((outdir / "comparison.json").read_text())
        reports = [EvidenceReport(
            log_evidence=payload["log_evidence"][l], avg_data_fit=payload["avg_data_fit"][l],
            info_gain=payload["info_gain"][l], estimator=payload["estimator"][l])
            for l in payload["models"]]
        comparison = ModelComparison.from_reports(payload["models"], reports)
        comparison.subsets = payload["subsets"]
        return cls(case_id=meta["case_id"], dataset=dataset, results=results,
                   comparison=comparison, failures=dict(meta["failures"]))


def default_exclusions(case_id: int, labels: list[str]) -> list[list[str]]:
    """Subset rows the benchmark tables use: drop the generating model, then
    additionally the correct-initial-stiffness walk variants."""
    exclusions: list[list[str]] = []
    walk_correct = [l for l in ("M4a", "M4b", "M5") if l in labels]
    if case_id == 2 and "M1" in labels and len(labels) > 1:
        exclusions.append(["M1"])
        if walk_correct and any(l.endswith(f"k{ERRONEOUS_INIT_STIFFNESS:g}") for l in labels):
            exclusions.append(["M1"] + walk_correct)
    if case_id == 3 and walk_correct and len(walk_correct) < len(labels):
        if any(l.endswith(f"k{ERRONEOUS_INIT_STIFFNESS:g}") for l in labels):
            exclusions.append(list(walk_correct))
    return exclusions


def run_case(case_id: int, config: TmcmcConfig, *, legs: list[ModelLeg] | None = None,
             dataset: SyntheticDataset | None = None, data_seed: int = 0,
             grid_dt: float = DEFAULT_GRID_DT, map_fn=map, compute_cj: bool = False,
             exclusions: list[list[str]] | None = None,
             vel_std: float = DEFAULT_VEL_STD, stiff_std: float = DEFAULT_STIFF_STD,
             backend_name: str | None = None) -> CampaignResult:
    """Run a full calibration-plus-selection campaign for one case.

    Per-model sampler seeds derive from ``config.seed`` and the leg index,
    so the campaign is reproducible end to end.  A failing leg is recorded
    under ``failures`` and the comparison is assembled over the survivors.
    """
    if dataset is None:
        dataset = generate_dataset(case_config(case_id, seed=data_seed))
    if legs is None:
        legs = standard_legs()

    results: list[CalibrationResult] = []
    failures: dict[str, str] = {}
    for index, leg in enumerate(legs):
        model = models.get_model(leg.model_id, leg.init_stiffness)
        leg_seed = int(np.random.SeedSequence(config.seed, spawn_key=(100, index))
                       .generate_state(1, np.uint64)[0])
        leg_config = dataclasses.replace(config, seed=leg_seed)
        try:
            results.append(calibrate_model(
                model, dataset.observations, leg_config, grid_dt, label=leg.label,
                map_fn=map_fn, compute_cj=compute_cj, vel_std=vel_std,
                stiff_std=stiff_std, backend_name=backend_name))
        except (tmcmc.TmcmcError, filtering.FilterError, selection.EvidenceEstimateError) as exc:
            failures[leg.label] = f"{type(exc).__name__}: {exc}"

    labels = [r.label for r in results]
    if exclusions is None:
        exclusions = default_exclusions(case_id, labels)
    exclusions = [e for e in exclusions if set(e) <= set(labels) and set(e) != set(labels)]
    comparison = ModelComparison.from_reports(labels, [r.report for r in results],
                                              exclusions=exclusions)
    return CampaignResult(case_id=case_id, dataset=dataset, results=results,
                          comparison=comparison, failures=failures)


def _dump_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

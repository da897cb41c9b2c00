"""Command-line entry point.

Subcommands: ``generate`` (synthetic datasets), ``calibrate`` (one model),
``compare`` (multi-model campaign) and ``report`` (re-render a saved
comparison table).  Every run writes its fully resolved configuration to
``config.json`` in the output directory, and every command accepts
``--config`` to replay such a file exactly; together with ``--seed`` this
makes all outputs byte-reproducible.

Exit codes: 0 success, 1 runtime/numeric failure, 2 usage or configuration
error.  Progress goes to stderr; machine-readable output to files and
stdout only.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from . import experiments, filtering, models, selection, tmcmc
from .experiments import ModelLeg, SyntheticDataset

OUTPUT_ROOT_ENV = "STIFFCAL_OUTPUT_ROOT"

# Campaign sampler defaults.  mh_steps defaults to 5 here (not the sampler's
# bare default of 1): with broad priors and 500+ observations the tempered
# flow outruns single-step chains and the population settles short of the
# posterior.
DEFAULT_N_SAMPLES = 1000
DEFAULT_MH_STEPS = 5


class _RuntimeFailure(click.ClickException):
    exit_code = 1


def _resolve_out(out: str) -> Path:
    root = os.environ.get(OUTPUT_ROOT_ENV)
    path = Path(out)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_config(config_path: str, command: str) -> dict:
    try:
        payload = json.loads(Path(config_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise click.UsageError(f"cannot read config {config_path}: {exc}")
    if not isinstance(payload, dict) or payload.get("command") != command:
        raise click.UsageError(
            f"config {config_path} is not a resolved {command!r} configuration")
    return payload


def _echo_config(outdir: Path, payload: dict) -> None:
    with open(outdir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _progress(message: str) -> None:
    click.echo(message, err=True)


def _tmcmc_config(payload: dict) -> tmcmc.TmcmcConfig:
    try:
        return tmcmc.TmcmcConfig(
            n_samples=payload["n_samples"], beta=payload["beta"],
            target_cov=payload["target_cov"], max_stages=payload["max_stages"],
            seed=payload["seed"], mh_steps=payload["mh_steps"])
    except (KeyError, ValueError) as exc:
        raise click.UsageError(f"invalid sampler configuration: {exc}")


def _map_fn(threads: int):
    if threads <= 1:
        return map
    executor = ThreadPoolExecutor(max_workers=threads)
    return executor.map


_SAMPLER_OPTIONS = (
    click.option("--n-samples", type=int, default=DEFAULT_N_SAMPLES, show_default=True,
                 help="TMCMC samples per stage."),
    click.option("--beta", type=float, default=0.2, show_default=True,
                 help="Proposal covariance scaling factor."),
    click.option("--target-cov", type=float, default=1.0, show_default=True,
                 help="Target coefficient of variation of the tempering weights."),
    click.option("--max-stages", type=int, default=100, show_default=True),
    click.option("--mh-steps", type=int, default=DEFAULT_MH_STEPS, show_default=True,
                 help="Metropolis-Hastings moves per sample per stage."),
    click.option("--grid-dt", type=float, default=filtering.DEFAULT_GRID_DT,
                 show_default=True, help="Filter grid step (s)."),
    click.option("--threads", type=int, default=1, show_default=True,
                 help="Worker threads for likelihood evaluations."),
)


def _with_options(options):
    def wrap(fn):
        for option in reversed(options):
            fn = option(fn)
        return fn
    return wrap


@click.group()
@click.version_option(package_name="stiffcal")
def main():
    """Calibrate stiffness-degradation models and rank them by evidence."""


@main.command()
@click.option("--case", type=click.IntRange(1, 3), help="Benchmark case id.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--noise-std", type=float, default=10.0, show_default=True,
              help="Sensor noise standard deviation (mm).")
@click.option("--sim-dt", type=float, default=0.001, show_default=True,
              help="Truth integration step (s).")
@click.option("--config", "config_path", type=str, default=None,
              help="Replay a resolved config.json (overrides other options).")
@click.option("--out", required=True, type=str, help="Output directory.")
def generate(case, seed, noise_std, sim_dt, config_path, out):
    """Generate a synthetic dataset (data.csv + provenance.json)."""
    if config_path is not None:
        payload = _load_config(config_path, "generate")
    else:
        if case is None:
            raise click.UsageError("--case is required (or provide --config)")
        payload = {"command": "generate", "case": case, "seed": seed,
                   "noise_std": noise_std, "sim_dt": sim_dt}
    outdir = _resolve_out(out)
    try:
        cfg = experiments.case_config(payload["case"], seed=payload["seed"],
                                      noise_std=payload["noise_std"],
                                      sim_dt=payload["sim_dt"])
    except (KeyError, ValueError, TypeError) as exc:
        raise click.UsageError(str(exc))
    try:
        dataset = experiments.generate_dataset(cfg)
        dataset.save(outdir)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    except OSError as exc:
        raise _RuntimeFailure(f"cannot write dataset: {exc}")
    _echo_config(outdir, payload)
    summary = dataset.summary()
    _progress(f"wrote {summary['n_obs']} observations to {outdir/'data.csv'}")
    _progress(f"pre-degradation RMS {summary['rms_pre_degradation']:.2f} mm, "
              f"noise-to-signal variance ratio "
              f"{100 * summary['noise_to_signal_variance_ratio']:.2f}%")


def _load_dataset(path: str) -> SyntheticDataset:
    dataset_dir = Path(path)
    if not (dataset_dir / "data.csv").exists():
        raise click.UsageError(f"dataset not found: {dataset_dir/'data.csv'}")
    try:
        return SyntheticDataset.load(dataset_dir)
    except (OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise click.UsageError(f"cannot load dataset from {dataset_dir}: {exc}")


@main.command()
@click.option("--model", "model_id", type=click.Choice(models.MODEL_IDS),
              help="Candidate to calibrate.")
@click.option("--data", "data_path", type=str, help="Dataset directory (from generate).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--init-k", type=float, default=80.0, show_default=True,
              help="Assumed initial stiffness mean for M4a/M4b/M5 (N/mm).")
@click.option("--cj/--no-cj", default=False, show_default=True,
              help="Also compute the Chib-Jeliazkov evidence cross-check.")
@_with_options(_SAMPLER_OPTIONS)
@click.option("--config", "config_path", type=str, default=None,
              help="Replay a resolved config.json (overrides other options).")
@click.option("--out", required=True, type=str, help="Output directory.")
def calibrate(model_id, data_path, seed, init_k, cj, n_samples, beta, target_cov,
              max_stages, mh_steps, grid_dt, threads, config_path, out):
    """Calibrate one candidate on a dataset."""
    if config_path is not None:
        payload = _load_config(config_path, "calibrate")
    else:
        if model_id is None or data_path is None:
            raise click.UsageError("--model and --data are required (or provide --config)")
        payload = {"command": "calibrate", "model": model_id, "data": data_path,
                   "seed": seed, "init_k": init_k, "cj": cj, "n_samples": n_samples,
                   "beta": beta, "target_cov": target_cov, "max_stages": max_stages,
                   "mh_steps": mh_steps, "grid_dt": grid_dt, "threads": threads}
    outdir = _resolve_out(out)
    dataset = _load_dataset(payload["data"])
    if payload["model"] not in models.MODEL_IDS:
        raise click.UsageError(f"unknown model id {payload['model']!r}")
    model = models.get_model(payload["model"], payload["init_k"])
    config = _tmcmc_config(payload)
    leg = ModelLeg(payload["model"], payload["init_k"])
    _progress(f"calibrating {leg.label} on {payload['data']} "
              f"(N={config.n_samples}, seed={config.seed})")
    try:
        result = experiments.calibrate_model(
            model, dataset.observations, config, payload["grid_dt"],
            label=leg.label, map_fn=_map_fn(payload["threads"]),
            compute_cj=payload["cj"])
    except (tmcmc.TmcmcError, filtering.FilterError,
            selection.EvidenceEstimateError) as exc:
        detail = ""
        if isinstance(exc, tmcmc.StageLimitError):
            detail = f" (stalled at stage {exc.partial_run.n_stages})"
        raise _RuntimeFailure(f"sampler failed{detail}: {exc}")
    result.save(outdir)
    _echo_config(outdir, payload)
    _progress(f"log evidence {result.report.log_evidence:.2f} "
              f"(fit {result.report.avg_data_fit:.2f}, "
              f"gain {result.report.info_gain:.2f})")
    for i, name in enumerate(result.param_names):
        column = result.posterior[:, i]
        _progress(f"  {name}: mean {column.mean():.4g}, std {column.std():.4g}")


@main.command()
@click.option("--case", type=click.IntRange(1, 3), help="Benchmark case id.")
@click.option("--models", "model_list", type=str, default="all", show_default=True,
              help="Comma-separated model ids, or 'all'.")
@click.option("--include-erroneous", is_flag=True, default=False,
              help="Add the wrong-initial-stiffness variants of M4a/M4b/M5.")
@click.option("--exclude", multiple=True,
              help="Emit an extra probability row excluding these ids "
                   "(repeatable; comma-separated within one flag).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--cj/--no-cj", default=False, show_default=True)
@_with_options(_SAMPLER_OPTIONS)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv",
              show_default=True)
@click.option("--config", "config_path", type=str, default=None,
              help="Replay a resolved config.json (overrides other options).")
@click.option("--out", required=True, type=str, help="Output directory.")
def compare(case, model_list, include_erroneous, exclude, seed, cj, n_samples, beta,
            target_cov, max_stages, mh_steps, grid_dt, threads, fmt, config_path, out):
    """Run a multi-model campaign and emit the comparison table."""
    if config_path is not None:
        payload = _load_config(config_path, "compare")
    else:
        if case is None:
            raise click.UsageError("--case is required (or provide --config)")
        payload = {"command": "compare", "case": case, "models": model_list,
                   "include_erroneous": include_erroneous,
                   "exclude": [e.strip() for item in exclude for e in item.split(",")],
                   "seed": seed, "cj": cj, "n_samples": n_samples, "beta": beta,
                   "target_cov": target_cov, "max_stages": max_stages,
                   "mh_steps": mh_steps, "grid_dt": grid_dt, "threads": threads,
                   "format": fmt}
    outdir = _resolve_out(out)
    if payload["models"] == "all":
        legs = experiments.standard_legs(payload["include_erroneous"])
    else:
        ids = [m.strip() for m in payload["models"].split(",") if m.strip()]
        unknown = [m for m in ids if m not in models.MODEL_IDS]
        if unknown:
            raise click.UsageError(f"unknown model ids {unknown}")
        if len(ids) < 2:
            raise click.UsageError("compare needs at least two models")
        legs = [ModelLeg(mid) for mid in ids]
        if payload["include_erroneous"]:
            legs += [ModelLeg(mid, experiments.ERRONEOUS_INIT_STIFFNESS)
                     for mid in ids if mid in ("M4a", "M4b", "M5")]
    config = _tmcmc_config(payload)
    labels = [leg.label for leg in legs]
    bad = [e for e in payload["exclude"] if e not in labels]
    if bad:
        raise click.UsageError(f"--exclude names unknown labels {bad}; legs are {labels}")
    exclusions = experiments.default_exclusions(payload["case"], labels)
    if payload["exclude"]:
        exclusions.append(list(payload["exclude"]))
    _progress(f"case {payload['case']} campaign over {', '.join(labels)}")
    try:
        campaign = experiments.run_case(
            payload["case"], config, legs=legs, data_seed=payload["seed"],
            grid_dt=payload["grid_dt"], map_fn=_map_fn(payload["threads"]),
            compute_cj=payload["cj"], exclusions=exclusions)
    except (tmcmc.TmcmcError, filtering.FilterError, ValueError) as exc:
        raise _RuntimeFailure(f"campaign failed: {exc}")
    for label, message in campaign.failures.items():
        _progress(f"warning: {label} failed ({message}); table covers the survivors")
    if not campaign.results:
        raise _RuntimeFailure("every model leg failed")
    campaign.save(outdir)
    _echo_config(outdir, payload)
    if payload["format"] == "json":
        click.echo(json.dumps(campaign.comparison.to_json_dict(), indent=2,
                              sort_keys=True))
    else:
        click.echo(campaign.comparison.to_csv_text(), nl=False)


@main.command()
@click.option("--campaign", "campaign_path", required=True, type=str,
              help="Campaign directory written by compare.")
@click.option("--exclude", multiple=True,
              help="Extra renormalized probability row (repeatable).")
@click.option("--offset", type=float, default=0.0, show_default=True,
              help="Presentation offset subtracted from evidence and fit columns.")
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv",
              show_default=True)
def report(campaign_path, exclude, offset, fmt):
    """Re-render a saved comparison table."""
    path = Path(campaign_path)
    if not (path / "comparison.json").exists():
        raise click.UsageError(f"no comparison found under {path}")
    try:
        campaign = experiments.CampaignResult.load(path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise _RuntimeFailure(f"cannot load campaign from {path}: {exc}")
    comparison = campaign.comparison
    for item in exclude:
        names = [e.strip() for e in item.split(",") if e.strip()]
        try:
            comparison.add_subset(names)
        except KeyError as exc:
            raise click.UsageError(str(exc))
    if fmt == "json":
        click.echo(json.dumps(comparison.to_json_dict(offset), indent=2, sort_keys=True))
    else:
        click.echo(comparison.to_csv_text(offset), nl=False)


if __name__ == "__main__":
    main()

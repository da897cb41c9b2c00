"""Model evidence and posterior model probabilities.

Two evidence estimators are provided: the stagewise product that falls out
of the transitional sampler for free (the default), and the
Chib-Jeliazkov posterior-ordinate estimator as an independent cross-check.
The log evidence splits into an average data-fit minus an information gain
(the prior-to-posterior KL divergence), which is the quantitative form of
Occam's razor used to read the comparison tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .tmcmc import TmcmcRun


class IncompleteRunError(ValueError):
    """The sampler run never reached the posterior (p=1)."""


class EvidenceEstimateError(RuntimeError):
    """A Monte Carlo evidence estimate could not be formed."""


class IllConditionedProposalError(EvidenceEstimateError):
    """Proposal covariance unusable for the posterior-ordinate estimate."""


@dataclass(frozen=True)
class EvidenceReport:
    """Evidence with its Occam decomposition: log_evidence =
    avg_data_fit - info_gain (identity maintained by construction)."""

    log_evidence: float
    avg_data_fit: float
    info_gain: float
    estimator: str = "stagewise"

    def __post_init__(self):
        residual = self.log_evidence - (self.avg_data_fit - self.info_gain)
        if math.isfinite(self.log_evidence) and abs(residual) > 1e-9:
            raise ValueError(f"evidence decomposition violated by {residual}")

    @classmethod
    def from_fit_and_gain(cls, avg_data_fit: float, info_gain: float,
                          estimator: str = "stagewise") -> "EvidenceReport":
        return cls(avg_data_fit - info_gain, avg_data_fit, info_gain, estimator)

    def to_dict(self) -> dict:
        return {"log_evidence": self.log_evidence, "avg_data_fit": self.avg_data_fit,
                "info_gain": self.info_gain, "estimator": self.estimator}


def _require_complete(run: TmcmcRun) -> None:
    if run.n_stages < 2 or run.stages[-1].p != 1.0:
        raise IncompleteRunError("sampler run did not reach p=1")


def log_evidence_stagewise(run: TmcmcRun) -> float:
    """Stagewise evidence estimate sum_j ln((1/N) sum_k lik_k^dp_j).

    Recomputed from the stored stage populations (log-space with
    max-subtraction), so it is independent of the increments accumulated
    during sampling up to floating-point rounding.
    """
    _require_complete(run)
    total = 0.0
    for lo, hi in zip(run.stages[:-1], run.stages[1:]):
        dp = hi.p - lo.p
        lls = lo.log_liks
        total += float(logsumexp(dp * lls[np.isfinite(lls)]) - math.log(lls.size))
    return total


def occam_decompose(posterior_log_liks, log_evidence: float,
                    estimator: str = "stagewise") -> EvidenceReport:
    """Split a log evidence into average data-fit and information gain.

    The fit is the posterior-sample mean of the data log-likelihood; the
    gain follows from the identity gain = fit - log_evidence.
    """
    lls = np.asarray(posterior_log_liks, dtype=float)
    if lls.size == 0:
        raise ValueError("need at least one posterior log-likelihood")
    fit = float(lls.mean())
    return EvidenceReport(log_evidence, fit, fit - log_evidence, estimator)


def model_probabilities(log_evidences, model_priors=None) -> np.ndarray:
    """Posterior model probabilities: softmax of log evidence + log prior.

    Computed through log-sum-exp; with equal priors this is exactly the
    normalized model evidence.
    """
    log_ev = np.asarray(log_evidences, dtype=float)
    if model_priors is None:
        scores = log_ev
    else:
        priors = np.asarray(model_priors, dtype=float)
        if priors.shape != log_ev.shape:
            raise ValueError("model_priors must match log_evidences in length")
        if np.any(priors < 0) or not np.any(priors > 0):
            raise ValueError("model priors must be nonnegative and not all zero")
        with np.errstate(divide="ignore"):
            scores = log_ev + np.log(priors)
    return np.exp(scores - logsumexp(scores))


def chib_jeliazkov(log_prior_fn, log_lik_fn, posterior_samples, posterior_log_liks,
                   proposal_cov, rng: np.random.Generator, theta_star=None,
                   n_draws: int | None = None) -> float:
    """Posterior-ordinate evidence estimate from the MH transition kernel.

    ln p(D) = ln lik(theta*) + ln prior(theta*) - ln post(theta*), with the
    posterior ordinate estimated as

        mean_k[ alpha(sample_k -> theta*) q(theta* | sample_k) ]
        ----------------------------------------------------------
        mean_l[ alpha(theta* -> draw_l) ],   draw_l ~ N(theta*, cov)

    where alpha is the MH acceptance probability of the random walk with
    covariance ``proposal_cov`` and q its Gaussian density.  ``theta_star``
    defaults to the highest-posterior sample.  Raises
    EvidenceEstimateError if the denominator estimate is zero and
    IllConditionedProposalError for an unusable covariance.
    """
    samples = np.atleast_2d(np.asarray(posterior_samples, dtype=float))
    lls = np.asarray(posterior_log_liks, dtype=float)
    n, d = samples.shape
    if lls.shape != (n,):
        raise ValueError("posterior_log_liks must match posterior_samples")
    cov = np.asarray(proposal_cov, dtype=float)
    if cov.shape != (d, d):
        raise ValueError(f"proposal covariance must be {d}x{d}")
    eigs = np.linalg.eigvalsh(0.5 * (cov + cov.T))
    if eigs[0] <= 0.0 or eigs[0] < 1e-12 * eigs[-1]:
        raise IllConditionedProposalError(
            f"proposal covariance is ill-conditioned (eigenvalues {eigs[0]:.3g}.."
            f"{eigs[-1]:.3g})")
    chol = np.linalg.cholesky(cov)

    log_priors = np.array([log_prior_fn(s) for s in samples])
    log_posts = log_priors + lls
    if theta_star is None:
        theta_star = samples[int(np.argmax(log_posts))]
    theta_star = np.asarray(theta_star, dtype=float)
    lp_star = log_prior_fn(theta_star)
    if lp_star == -math.inf:
        raise ValueError("theta_star must lie inside the prior support")
    ll_star = log_lik_fn(theta_star)
    post_star = lp_star + ll_star

    # Numerator: acceptance toward theta* times the proposal density there.
    deltas = theta_star - samples
    y = solve_triangular(chol, deltas.T, lower=True)
    quad = np.sum(y * y, axis=0)
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    log_q = -0.5 * (d * math.log(2.0 * math.pi) + log_det + quad)
    log_alpha_in = np.minimum(0.0, post_star - log_posts)
    log_numerator = float(logsumexp(log_alpha_in + log_q) - math.log(n))

    # Denominator: mean acceptance away from theta* over fresh proposal draws.
    m = n if n_draws is None else int(n_draws)
    draws = theta_star + rng.standard_normal((m, d)) @ chol.T
    alphas = np.zeros(m)
    for i, draw in enumerate(draws):
        lp = log_prior_fn(draw)
        if lp == -math.inf:
            continue
        ll = log_lik_fn(draw)
        alphas[i] = math.exp(min(0.0, (lp + ll) - post_star))
    denominator = float(alphas.mean())
    if denominator <= 0.0:
        raise EvidenceEstimateError(
            "posterior-ordinate denominator is zero; increase n_draws or check "
            "the proposal covariance")

    log_ordinate = log_numerator - math.log(denominator)
    return float(ll_star + lp_star - log_ordinate)


def log_evidence_chib_jeliazkov(model, data, run: TmcmcRun, rng: np.random.Generator,
                                grid_dt: float | None = None, theta_star=None,
                                n_draws: int | None = None, **filter_options) -> float:
    """Chib-Jeliazkov evidence for a completed filter-based calibration.

    Uses the run's final-stage proposal covariance as the kernel and the
    model's filter likelihood; see ``chib_jeliazkov`` for the estimator.
    """
    from . import filtering  # deferred: selection is otherwise filter-agnostic

    _require_complete(run)
    proposal_cov = run.stages[-2].proposal_cov
    if proposal_cov is None:
        raise IncompleteRunError("run carries no final-stage proposal covariance")
    if grid_dt is None:
        grid_dt = filtering.DEFAULT_GRID_DT
    loglik = filtering.likelihood_fn(model, data, grid_dt, **filter_options)
    return chib_jeliazkov(model.prior.log_density, loglik, run.posterior_samples,
                          run.posterior_log_liks, proposal_cov, rng,
                          theta_star=theta_star, n_draws=n_draws)


@dataclass
class ModelComparison:
    """Evidence table over a candidate set plus optional subset rows.

    ``subsets`` holds renormalized probability rows after excluding some
    labels, the star-row convention of the comparison tables.
    """

    labels: list[str]
    reports: list[EvidenceReport]
    probabilities: np.ndarray
    subsets: list[dict] = field(default_factory=list)

    @classmethod
    def from_reports(cls, labels, reports, model_priors=None,
                     exclusions: list[list[str]] | None = None) -> "ModelComparison":
        labels = list(labels)
        reports = list(reports)
        if len(labels) != len(reports):
            raise ValueError("labels and reports must have equal length")
        log_ev = [r.log_evidence for r in reports]
        comparison = cls(labels, reports, model_probabilities(log_ev, model_priors))
        for excluded in exclusions or []:
            comparison.add_subset(excluded)
        return comparison

    def add_subset(self, excluded: list[str]) -> None:
        remaining, probs = self.excluding(excluded)
        self.subsets.append({
            "excluded": list(excluded),
            "probability_pct": {l: 100.0 * p for l, p in zip(remaining, probs)},
        })

    def excluding(self, excluded) -> tuple[list[str], np.ndarray]:
        """Renormalized probabilities over the remaining candidates."""
        excluded = set(excluded)
        unknown = excluded - set(self.labels)
        if unknown:
            raise KeyError(f"cannot exclude unknown labels {sorted(unknown)}")
        keep = [i for i, l in enumerate(self.labels) if l not in excluded]
        if not keep:
            raise ValueError("cannot exclude every candidate")
        labels = [self.labels[i] for i in keep]
        probs = model_probabilities([self.reports[i].log_evidence for i in keep])
        return labels, probs

    def to_json_dict(self, offset: float = 0.0) -> dict:
        return {
            "models": list(self.labels),
            "offset": offset,
            "log_evidence": {l: r.log_evidence - offset
                             for l, r in zip(self.labels, self.reports)},
            "avg_data_fit": {l: r.avg_data_fit - offset
                             for l, r in zip(self.labels, self.reports)},
            "info_gain": {l: r.info_gain for l, r in zip(self.labels, self.reports)},
            "estimator": {l: r.estimator for l, r in zip(self.labels, self.reports)},
            "probability_pct": {l: 100.0 * p
                                for l, p in zip(self.labels, self.probabilities)},
            "subsets": [dict(s) for s in self.subsets],
        }

    def to_csv_text(self, offset: float = 0.0) -> str:
        """Metric-by-model table mirroring the report layout."""
        lines = ["metric," + ",".join(self.labels)]

        def row(name, values):
            lines.append(name + "," + ",".join(values))

        row("log_evidence", [repr(float(r.log_evidence - offset)) for r in self.reports])
        row("avg_data_fit", [repr(float(r.avg_data_fit - offset)) for r in self.reports])
        row("info_gain", [repr(float(r.info_gain)) for r in self.reports])
        row("probability_pct", [repr(float(100.0 * p)) for p in self.probabilities])
        for subset in self.subsets:
            name = "probability_pct_excluding_" + "+".join(subset["excluded"])
            cells = [repr(float(subset["probability_pct"][l]))
                     if l in subset["probability_pct"] else "" for l in self.labels]
            row(name, cells)
        return "\n".join(lines) + "\n"

"""Transitional MCMC over the static parameters.

The sampler bridges from the prior (tempering exponent p=0) to the
posterior (p=1) through a sequence of intermediate distributions
prior * likelihood^p.  Each transition

1. picks the next exponent so the plausibility weights
   likelihood^(p_next - p) keep a target coefficient of variation,
2. resamples the population by those weights (multinomial),
3. moves every sample with Metropolis-Hastings steps whose Gaussian
   proposal covariance is the weighted sample covariance scaled by beta^2.

The per-stage log-mean of the unnormalized weights accumulates into the
model log-evidence as a byproduct.

Randomness is organized as one counter-derived substream per use site
((stage, sample-index) for the moves), so runs are bit-reproducible from
the seed regardless of how the per-sample work is mapped (sequentially or
over threads).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

_BISECT_TOL = 1e-10


class TmcmcError(RuntimeError):
    """Base class for sampler failures."""


class AllSamplesDivergedError(TmcmcError):
    """Every sample in a stage has -inf log-likelihood."""


class DegenerateProposalError(TmcmcError):
    """Weighted sample covariance collapsed to a point."""


class StageLimitError(TmcmcError):
    """Stage budget exhausted before the posterior was reached; the partial
    run is attached as ``partial_run``."""

    def __init__(self, message: str, partial_run: "TmcmcRun"):
        super().__init__(message)
        self.partial_run = partial_run


@dataclass(frozen=True)
class TmcmcConfig:
    """Sampler settings.

    ``beta`` scales the proposal covariance (beta^2 times the weighted
    sample covariance); ``target_cov`` is the coefficient-of-variation
    target steering the tempering schedule; ``mh_steps`` is the number of
    Metropolis-Hastings moves applied to each sample per stage.
    """

    n_samples: int
    beta: float = 0.2
    target_cov: float = 1.0
    max_stages: int = 100
    seed: int = 0
    mh_steps: int = 1

    def __post_init__(self):
        if self.n_samples < 100:
            raise ValueError("n_samples must be at least 100")
        if self.beta <= 0 or self.target_cov <= 0:
            raise ValueError("beta and target_cov must be positive")
        if self.max_stages < 1 or self.mh_steps < 1:
            raise ValueError("max_stages and mh_steps must be at least 1")


@dataclass
class Stage:
    """One tempering stage: the population at exponent ``p`` plus the
    transition quantities toward the next stage (None on the final one)."""

    p: float
    samples: np.ndarray
    log_liks: np.ndarray
    weights: np.ndarray | None = None
    acceptance_rate: float | None = None
    log_evidence_increment: float | None = None
    proposal_cov: np.ndarray | None = None
    cov_achieved: float | None = None


@dataclass
class TmcmcRun:
    """Completed sampler output."""

    stages: list[Stage]
    log_evidence: float
    seed: int
    param_names: tuple[str, ...] | None = None

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    @property
    def exponents(self) -> np.ndarray:
        return np.array([s.p for s in self.stages])

    @property
    def posterior_samples(self) -> np.ndarray:
        return self.stages[-1].samples

    @property
    def posterior_log_liks(self) -> np.ndarray:
        return self.stages[-1].log_liks

    def stage_summary(self) -> list[dict]:
        """Per-stage diagnostics (exponent, CoV, acceptance, evidence
        increment) in JSON-ready form."""
        out = []
        for s in self.stages:
            out.append({
                "p": s.p,
                "n_samples": int(s.samples.shape[0]),
                "cov_achieved": s.cov_achieved,
                "acceptance_rate": s.acceptance_rate,
                "log_evidence_increment": s.log_evidence_increment,
            })
        return out


class MhMove(NamedTuple):
    theta: np.ndarray
    accepted: bool
    log_prior: float
    log_lik: float


def substream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for a (seed, counter-key) pair."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


def _scaled_weights(log_liks: np.ndarray, dp: float) -> tuple[np.ndarray, float]:
    """exp(dp * log_liks) with max-subtraction; -inf entries get weight 0.
    Returns (weights, shift) with weights = exp(dp*ll - shift)."""
    finite = np.isfinite(log_liks)
    if not np.any(finite):
        raise AllSamplesDivergedError("all log-likelihoods are -inf")
    scaled = np.where(finite, dp * log_liks, -np.inf)
    shift = float(np.max(scaled))
    return np.exp(scaled - shift), shift


def _weight_cov(weights: np.ndarray) -> float:
    mean = weights.mean()
    return float(weights.std(ddof=1) / mean)


def next_exponent(log_liks, p_current: float, target_cov: float) -> float:
    """Choose the next tempering exponent by bisection.

    Returns min(1, p*) where p* makes the coefficient of variation of the
    plausibility weights exp((p* - p_current) * log_liks) hit
    ``target_cov`` (bisection tolerance 1e-10 in p).  -inf entries carry
    zero weight; if even an infinitesimal step exceeds the target (possible
    only when a large fraction of the population is -inf) the minimal step
    is taken so that resampling can prune the dead samples.
    """
    if not 0.0 <= p_current < 1.0:
        raise ValueError("p_current must lie in [0, 1)")
    lls = np.asarray(log_liks, dtype=float)

    def cov_at(dp: float) -> float:
        w, _ = _scaled_weights(lls, dp)
        return _weight_cov(w)

    dp_max = 1.0 - p_current
    if cov_at(dp_max) <= target_cov:
        return 1.0
    lo, hi = 0.0, dp_max
    while hi - lo > _BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if cov_at(mid) > target_cov:
            hi = mid
        else:
            lo = mid
    dp = max(lo, _BISECT_TOL)
    return p_current + dp


def plausibility_weights(log_liks, dp: float) -> tuple[np.ndarray, float]:
    """Normalized tempering weights and the stage evidence increment.

    The weights are exp(dp * log_lik), computed with max-subtraction and
    normalized to sum to one; the increment is ln of the mean unnormalized
    weight, i.e. ln((1/N) sum_k likelihood_k^dp).
    """
    if not 0.0 < dp <= 1.0:
        raise ValueError("dp must lie in (0, 1]")
    lls = np.asarray(log_liks, dtype=float)
    w, shift = _scaled_weights(lls, dp)
    total = float(w.sum())
    log_increment = shift + math.log(total / lls.size)
    return w / total, log_increment


def proposal_covariance(samples, weights, beta: float) -> np.ndarray:
    """Scaled weighted sample covariance beta^2 * sum w (x-mu)(x-mu)^T.

    ``weights`` may be unnormalized; they are normalized internally and
    ``mu`` is the weighted mean.  A diagonal jitter of 1e-10 * trace is
    added if the Cholesky factorization fails.  Raises
    DegenerateProposalError when the population has collapsed onto a
    single point.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    w = np.asarray(weights, dtype=float)
    if samples.shape[0] < 2:
        raise ValueError("need at least two samples")
    total = w.sum()
    if not (total > 0 and np.all(np.isfinite(w)) and np.all(w >= 0)):
        raise ValueError("weights must be nonnegative, finite and not all zero")
    wn = w / total
    mu = wn @ samples
    dev = samples - mu
    cov = beta ** 2 * ((dev * wn[:, None]).T @ dev)
    cov = 0.5 * (cov + cov.T)
    trace = float(np.trace(cov))
    if not math.isfinite(trace) or trace <= 0.0:
        ess = 1.0 / float(np.sum(wn ** 2))
        raise DegenerateProposalError(
            f"weighted sample covariance is degenerate (trace={trace}, "
            f"effective sample size={ess:.2f})")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        cov = cov + 1e-10 * trace * np.eye(cov.shape[0])
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise DegenerateProposalError("proposal covariance is not positive "
                                          "definite even after jitter") from None
    return cov


def mh_step(current, cov, p: float, log_prior_fn: Callable, log_lik_fn: Callable,
            rng: np.random.Generator, *, chol: np.ndarray | None = None,
            current_log_prior: float | None = None,
            current_log_lik: float | None = None) -> MhMove:
    """One Metropolis-Hastings move on the tempered target prior*lik^p.

    The proposal is a Gaussian random walk with covariance ``cov``
    (``chol`` may carry its precomputed Cholesky factor).  Proposals
    outside the prior support are rejected without evaluating the
    likelihood.  Draw order is fixed (proposal, then acceptance uniform)
    so the move consumes the same stream regardless of outcome.
    """
    current = np.asarray(current, dtype=float)
    if chol is None:
        chol = np.linalg.cholesky(np.asarray(cov, dtype=float))
    z = rng.standard_normal(current.size)
    u = rng.uniform()
    proposal = current + chol @ z
    lp_cur = log_prior_fn(current) if current_log_prior is None else current_log_prior
    ll_cur = log_lik_fn(current) if current_log_lik is None else current_log_lik
    lp_prop = log_prior_fn(proposal)
    if lp_prop == -math.inf:
        return MhMove(current, False, lp_cur, ll_cur)
    ll_prop = log_lik_fn(proposal)
    log_alpha = (lp_prop + p * ll_prop) - (lp_cur + p * ll_cur)
    if u < math.exp(min(0.0, log_alpha)):
        return MhMove(proposal, True, lp_prop, ll_prop)
    return MhMove(current, False, lp_cur, ll_cur)


def run(log_prior_fn: Callable, log_lik_fn: Callable, prior_sampler: Callable,
        config: TmcmcConfig, *, param_names: Sequence[str] | None = None,
        map_fn: Callable = map) -> TmcmcRun:
    """Run the full staged sampler.

    Parameters
    ----------
    log_prior_fn, log_lik_fn
        Log prior density and log likelihood over parameter arrays; the
        likelihood must be total over the prior support (it may return
        -inf for numerically diverged evaluations).
    prior_sampler
        rng -> parameter array, drawing from the prior.
    map_fn
        Parallel map used for the per-sample likelihood evaluations and
        Metropolis-Hastings moves (e.g. a thread-pool executor's ``map``).
        Results are identical for any map implementation because every
        sample owns a pre-keyed random substream.

    Raises StageLimitError (with the partial run attached) if
    ``config.max_stages`` transitions do not reach p=1.
    """
    n = config.n_samples
    seed = config.seed

    samples = np.array([np.asarray(prior_sampler(substream(seed, 0, k)), dtype=float)
                        for k in range(n)])
    log_priors = np.array([log_prior_fn(s) for s in samples])
    log_liks = np.array(list(map_fn(log_lik_fn, list(samples))), dtype=float)

    stages: list[Stage] = []
    log_evidence = 0.0
    p = 0.0
    for j in range(config.max_stages):
        p_next = next_exponent(log_liks, p, config.target_cov)
        dp = p_next - p
        weights, increment = plausibility_weights(log_liks, dp)
        cov_achieved = _weight_cov(weights)
        cov = proposal_covariance(samples, weights, config.beta)
        chol = np.linalg.cholesky(cov)
        log_evidence += increment
        stages.append(Stage(p=p, samples=samples, log_liks=log_liks, weights=weights,
                            log_evidence_increment=increment, proposal_cov=cov,
                            cov_achieved=cov_achieved))

        picks = substream(seed, 1, j).choice(n, size=n, replace=True, p=weights)
        base = samples[picks]
        base_lp = log_priors[picks]
        base_ll = log_liks[picks]

        def move(k: int, _j=j, _p=p_next, _base=base, _lp=base_lp, _ll=base_ll,
                 _cov=cov, _chol=chol):
            rng = substream(seed, 2, _j, k)
            theta, lp, ll = _base[k], _lp[k], _ll[k]
            accepted = 0
            for _ in range(config.mh_steps):
                mv = mh_step(theta, _cov, _p, log_prior_fn, log_lik_fn, rng,
                             chol=_chol, current_log_prior=lp, current_log_lik=ll)
                theta, lp, ll = mv.theta, mv.log_prior, mv.log_lik
                accepted += mv.accepted
            return theta, lp, ll, accepted

        results = list(map_fn(move, range(n)))
        samples = np.array([r[0] for r in results])
        log_priors = np.array([r[1] for r in results])
        log_liks = np.array([r[2] for r in results])
        stages[-1].acceptance_rate = sum(r[3] for r in results) / (n * config.mh_steps)
        p = p_next
        if p >= 1.0:
            break
    else:
        partial = TmcmcRun(stages=stages, log_evidence=log_evidence, seed=seed,
                           param_names=tuple(param_names) if param_names else None)
        raise StageLimitError(
            f"tempering did not reach p=1 within {config.max_stages} stages "
            f"(reached p={p:.6g})", partial)

    stages.append(Stage(p=1.0, samples=samples, log_liks=log_liks))
    return TmcmcRun(stages=stages, log_evidence=log_evidence, seed=seed,
                    param_names=tuple(param_names) if param_names else None)

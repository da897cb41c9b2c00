import numpy as np
import pytest

import _oracles
from stiffcal import tmcmc
from stiffcal.selection import (EvidenceEstimateError, EvidenceReport,
                                IllConditionedProposalError, IncompleteRunError,
                                ModelComparison, chib_jeliazkov, model_probabilities,
                                log_evidence_stagewise, occam_decompose)
from stiffcal.tmcmc import TmcmcConfig

# Published comparison table for the small-sudden-drop benchmark (values
# carry a -1600 presentation offset; irrelevant for these identities).
TABLE_SMALL_DROP = {
    "M1": (75.45, 98.41, 22.96),
    "M2": (54.21, 65.51, 11.30),
    "M3": (43.05, 58.30, 15.24),
    "M4a": (77.28, 83.59, 6.32),
    "M4b": (68.19, 74.82, 6.63),
    "M5": (74.50, 87.25, 12.74),
    "M6": (72.27, 86.94, 14.67),
}
PROBS_SMALL_DROP = {"M1": 13.06, "M2": 0.00, "M3": 0.00, "M4a": 81.31,
                    "M4b": 0.01, "M5": 5.08, "M6": 0.54}

TABLE_LARGE_DROP_EV = {"M2": -104.07, "M3": -652.78, "M4a": -138.62,
                       "M4a-k60": -109.94, "M4b": -11.82, "M4b-k60": -14.54,
                       "M5": -3.06, "M5-k60": -5.84, "M6": -4.71}
PROBS_LARGE_DROP_STAR = {"M2": 0.00, "M3": 0.00, "M4a": 0.00, "M4a-k60": 0.00,
                         "M4b": 0.01, "M4b-k60": 0.00, "M5": 79.71,
                         "M5-k60": 4.92, "M6": 15.36}


def _conjugate_run(seed, n_samples=1000, mh_steps=3):
    y = np.random.default_rng(555).normal(1.0, 3.0, 20)
    loglik = _oracles.gaussian_mean_loglik(y, 3.0)
    logprior = _oracles.uniform_box_logprior(-50.0, 50.0)
    sampler = lambda rng: rng.uniform(-50.0, 50.0, 1)
    cfg = TmcmcConfig(n_samples=n_samples, seed=seed, mh_steps=mh_steps)
    run = tmcmc.run(logprior, loglik, sampler, cfg)
    analytic = _oracles.gaussian_mean_log_evidence(y, 3.0, -50.0, 50.0)
    return run, loglik, logprior, analytic


# ----------------------------------------------------------------- stagewise

def test_flat_likelihood_evidence_is_the_constant():
    logprior = _oracles.uniform_box_logprior(-1.0, 1.0)
    sampler = lambda rng: rng.uniform(-1.0, 1.0, 1)
    run = tmcmc.run(logprior, lambda th: 4.2, sampler, TmcmcConfig(150, seed=1))
    assert log_evidence_stagewise(run) == pytest.approx(4.2, abs=1e-12)


def test_stagewise_matches_analytic_conjugate_evidence():
    errors = []
    for seed in range(3):
        run, _, _, analytic = _conjugate_run(seed)
        errors.append(abs(log_evidence_stagewise(run) - analytic))
    assert np.median(errors) < 0.15


def test_incomplete_run_rejected():
    run, *_ = _conjugate_run(0, n_samples=150)
    run.stages[-1].p = 0.7
    with pytest.raises(IncompleteRunError):
        log_evidence_stagewise(run)


def test_wider_prior_pays_occam_penalty():
    # same likelihood peak, 10x wider prior box: model B must lose evidence
    y = np.random.default_rng(3).normal(0.0, 2.0, 25)
    analytic_a = _oracles.gaussian_mean_log_evidence(y, 2.0, -10.0, 10.0)
    analytic_b = _oracles.gaussian_mean_log_evidence(y, 2.0, -100.0, 100.0)
    assert analytic_b < analytic_a
    loglik = _oracles.gaussian_mean_loglik(y, 2.0)
    estimates = {}
    for label, lo, hi in (("A", -10.0, 10.0), ("B", -100.0, 100.0)):
        run = tmcmc.run(_oracles.uniform_box_logprior(lo, hi),
                        loglik, lambda rng, lo=lo, hi=hi: rng.uniform(lo, hi, 1),
                        TmcmcConfig(800, seed=4, mh_steps=3))
        estimates[label] = log_evidence_stagewise(run)
    assert estimates["B"] < estimates["A"]
    assert estimates["A"] == pytest.approx(analytic_a, abs=0.3)
    assert estimates["B"] == pytest.approx(analytic_b, abs=0.3)


# --------------------------------------------------------------------- occam

def test_occam_identity_on_published_table():
    for model_id, (evidence, fit, gain) in TABLE_SMALL_DROP.items():
        report = EvidenceReport.from_fit_and_gain(fit, gain)
        assert report.log_evidence == pytest.approx(evidence, abs=0.02), model_id


def test_occam_decompose_identity_and_flat_case():
    lls = np.array([-3.0, -1.0, -2.0])
    report = occam_decompose(lls, log_evidence=-2.5)
    assert report.avg_data_fit == pytest.approx(-2.0)
    assert report.info_gain == pytest.approx(0.5)
    assert report.log_evidence == report.avg_data_fit - report.info_gain
    flat = occam_decompose(np.full(100, 4.2), log_evidence=4.2)
    assert flat.info_gain == pytest.approx(0.0, abs=1e-12)


def test_report_identity_enforced():
    with pytest.raises(ValueError):
        EvidenceReport(log_evidence=1.0, avg_data_fit=5.0, info_gain=1.0)


def test_info_gain_nonnegative_on_sampled_runs():
    run, *_ , = _conjugate_run(1, n_samples=400)
    report = occam_decompose(run.posterior_log_liks, log_evidence_stagewise(run))
    assert report.info_gain >= -0.5


# ----------------------------------------------------------- probabilities

def test_equal_evidences_split_evenly():
    np.testing.assert_allclose(model_probabilities([0.0, 0.0]), [0.5, 0.5])


def test_probabilities_invariant_to_constant_shift():
    ev = np.array([-1600.0, -1595.5, -1610.2])
    p1 = model_probabilities(ev)
    p2 = model_probabilities(ev + 1600.0)
    np.testing.assert_allclose(p1, p2, rtol=1e-12)
    assert p1.sum() == pytest.approx(1.0, abs=1e-12)


def test_published_probability_row_reproduced():
    labels = list(TABLE_SMALL_DROP)
    probs = 100.0 * model_probabilities([TABLE_SMALL_DROP[l][0] for l in labels])
    for label, got in zip(labels, probs):
        assert got == pytest.approx(PROBS_SMALL_DROP[label], abs=0.05), label


def test_published_star_row_reproduced_after_removing_winner():
    labels = list(TABLE_LARGE_DROP_EV)
    probs = 100.0 * model_probabilities([TABLE_LARGE_DROP_EV[l] for l in labels])
    for label, got in zip(labels, probs):
        assert got == pytest.approx(PROBS_LARGE_DROP_STAR[label], abs=0.1), label


def test_model_priors_reweight_and_validate():
    probs = model_probabilities([0.0, 0.0], model_priors=[3.0, 1.0])
    np.testing.assert_allclose(probs, [0.75, 0.25])
    with pytest.raises(ValueError):
        model_probabilities([0.0, 0.0], model_priors=[0.0, 0.0])
    with pytest.raises(ValueError):
        model_probabilities([0.0, 0.0], model_priors=[1.0])


def test_excluding_equals_conditioning():
    labels = list(TABLE_SMALL_DROP)
    reports = [EvidenceReport.from_fit_and_gain(f, g)
               for _, f, g in TABLE_SMALL_DROP.values()]
    comparison = ModelComparison.from_reports(labels, reports)
    remaining, renorm = comparison.excluding(["M4a"])
    keep = [i for i, l in enumerate(labels) if l != "M4a"]
    conditioned = comparison.probabilities[keep] / comparison.probabilities[keep].sum()
    np.testing.assert_allclose(renorm, conditioned, rtol=1e-10)
    assert remaining == [l for l in labels if l != "M4a"]
    with pytest.raises(KeyError):
        comparison.excluding(["M9"])
    with pytest.raises(ValueError):
        comparison.excluding(labels)


def test_comparison_rendering_and_offset():
    labels = ["A", "B"]
    reports = [EvidenceReport.from_fit_and_gain(-1500.0, 20.0),
               EvidenceReport.from_fit_and_gain(-1510.0, 10.0)]
    comparison = ModelComparison.from_reports(labels, reports, exclusions=[["A"]])
    text = comparison.to_csv_text(offset=-1600.0)
    lines = text.splitlines()
    assert lines[0] == "metric,A,B"
    assert lines[1].startswith("log_evidence,80.0,")
    assert any(line.startswith("probability_pct_excluding_A,,") for line in lines)
    payload = comparison.to_json_dict()
    assert payload["models"] == labels
    assert payload["probability_pct"]["A"] == pytest.approx(
        100.0 * comparison.probabilities[0])
    assert payload["subsets"][0]["excluded"] == ["A"]


# ------------------------------------------------------------ chib-jeliazkov

def test_cj_agrees_with_stagewise_on_conjugate_benchmark():
    gaps = []
    for seed in range(3):
        run, loglik, logprior, _ = _conjugate_run(seed)
        cj = chib_jeliazkov(logprior, loglik, run.posterior_samples,
                            run.posterior_log_liks, run.stages[-2].proposal_cov,
                            np.random.default_rng(seed + 50))
        gaps.append(abs(cj - log_evidence_stagewise(run)))
    assert np.median(gaps) < 0.5


def test_cj_shifts_exactly_with_likelihood_constant():
    run, loglik, logprior, _ = _conjugate_run(2, n_samples=400)
    kwargs = dict(posterior_samples=run.posterior_samples,
                  posterior_log_liks=run.posterior_log_liks,
                  proposal_cov=run.stages[-2].proposal_cov)
    base = chib_jeliazkov(logprior, loglik, rng=np.random.default_rng(1), **kwargs)
    shifted_ll = lambda th: loglik(th) + 55.5
    kwargs["posterior_log_liks"] = run.posterior_log_liks + 55.5
    shifted = chib_jeliazkov(logprior, shifted_ll, rng=np.random.default_rng(1), **kwargs)
    assert shifted - base == pytest.approx(55.5, abs=1e-9)


def test_cj_rejects_ill_conditioned_proposal():
    run, loglik, logprior, _ = _conjugate_run(0, n_samples=150)
    with pytest.raises(IllConditionedProposalError):
        chib_jeliazkov(logprior, loglik, run.posterior_samples,
                       run.posterior_log_liks, np.zeros((1, 1)),
                       np.random.default_rng(0))


def test_cj_zero_denominator_advises_more_draws():
    run, loglik, logprior, _ = _conjugate_run(0, n_samples=150)
    huge = np.array([[1e12]])  # nearly every fresh draw leaves the prior box
    with pytest.raises(EvidenceEstimateError, match="n_draws"):
        chib_jeliazkov(logprior, loglik, run.posterior_samples,
                       run.posterior_log_liks, huge, np.random.default_rng(3),
                       n_draws=40)


def test_cj_theta_star_must_be_supported():
    run, loglik, logprior, _ = _conjugate_run(0, n_samples=150)
    with pytest.raises(ValueError):
        chib_jeliazkov(logprior, loglik, run.posterior_samples,
                       run.posterior_log_liks, run.stages[-2].proposal_cov,
                       np.random.default_rng(0), theta_star=np.array([500.0]))

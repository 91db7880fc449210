import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, optimize, stats
from scipy.special import log_ndtr

from selinf_mle.exceptions import DegenerateSelection, DomainError
from selinf_mle.filedrawer import (FileDrawerProblem, exact_mle_density, fisher_info_1d,
                                   fit_1d, grad_alpha, hess_alpha, mse_bound_check,
                                   pivot_1d, pvalue_1d, rescaled_study, sample_selected,
                                   soft_trunc_loglik, solve_mle_1d, threshold_from_level)


def alpha_oracle(beta, tau, eta2):
    return 0.5 * beta**2 + log_ndtr((beta - tau) / math.sqrt(1 + eta2))


def score_oracle(beta, y, tau, eta2):
    h = 1e-5
    return (alpha_oracle(beta + h, tau, eta2) - alpha_oracle(beta - h, tau, eta2)) / (2 * h) - y


@pytest.fixture
def prob():
    return FileDrawerProblem(0.0, 1.0)


def test_threshold_known_values():
    assert threshold_from_level(0.05, 0.0) == pytest.approx(1.6448536, abs=1e-6)
    assert threshold_from_level(0.05, 1.0) == pytest.approx(math.sqrt(2) * 1.6448536, abs=1e-6)


@pytest.mark.parametrize("q,eta2", [(0.0, 1.0), (1.0, 1.0), (0.1, -0.5)])
def test_threshold_rejects_bad_arguments(q, eta2):
    with pytest.raises(DomainError):
        threshold_from_level(q, eta2)


def test_problem_requires_positive_randomization():
    with pytest.raises(DomainError):
        FileDrawerProblem(0.0, 0.0)
    p = FileDrawerProblem.from_level(0.1, 1.0)
    assert p.tau == pytest.approx(math.sqrt(2) * stats.norm.isf(0.1))


@pytest.mark.parametrize("beta", [-6.0, -2.0, 0.0, 1.3, 5.0])
@pytest.mark.parametrize("eta2", [0.25, 1.0, 4.0])
def test_derivatives_match_finite_differences(beta, eta2):
    prob = FileDrawerProblem(0.5, eta2)
    h = 1e-5
    fd1 = (alpha_oracle(beta + h, 0.5, eta2) - alpha_oracle(beta - h, 0.5, eta2)) / (2 * h)
    assert grad_alpha(beta, prob) == pytest.approx(fd1, abs=1e-7)
    fd2 = (grad_alpha(beta + h, prob) - grad_alpha(beta - h, prob)) / (2 * h)
    assert hess_alpha(beta, prob) == pytest.approx(fd2, abs=1e-6)


@pytest.mark.parametrize("y", [-1.0, 0.0, 0.3, 1.0, 2.5, 6.0])
def test_mle_matches_bisection_oracle(y, prob):
    ref = optimize.brentq(score_oracle, y - 30, y, args=(y, 0.0, 1.0), xtol=1e-13)
    assert solve_mle_1d(y, prob) == pytest.approx(ref, abs=1e-6)


def test_mle_maximizes_soft_truncated_likelihood(prob):
    y = 0.7
    res = optimize.minimize_scalar(lambda b: -soft_trunc_loglik(y, b, prob),
                                   bounds=(-10, 5), method="bounded",
                                   options=dict(xatol=1e-10))
    assert solve_mle_1d(y, prob) == pytest.approx(res.x, abs=1e-6)


def test_vectorized_solve_agrees_with_scalar(prob):
    ys = np.linspace(-2, 4, 13)
    vec = solve_mle_1d(ys, prob)
    assert np.allclose(vec, [solve_mle_1d(float(y), prob) for y in ys], atol=1e-12)


def test_nonfinite_observation_rejected(prob):
    with pytest.raises(DomainError):
        solve_mle_1d(np.nan, prob)


@settings(max_examples=60, deadline=None)
@given(y=st.floats(-5, 8), tau=st.floats(-2, 3), eta2=st.floats(0.05, 10))
def test_estimating_equation_holds(y, tau, eta2):
    prob = FileDrawerProblem(tau, eta2)
    b = solve_mle_1d(y, prob)
    assert abs(grad_alpha(b, prob) - y) < 1e-9
    # the selection correction always pulls the estimate below the observation
    assert b < y
    info = fisher_info_1d(b, prob)
    assert eta2 / (1 + eta2) - 1e-12 <= info <= 1.0


@settings(max_examples=40, deadline=None)
@given(y1=st.floats(-4, 6), dy=st.floats(0.01, 3))
def test_mle_increasing_in_observation(y1, dy):
    prob = FileDrawerProblem(0.0, 1.0)
    assert solve_mle_1d(y1 + dy, prob) > solve_mle_1d(y1, prob)


def test_fit_interval_and_pvalue(prob):
    fit = fit_1d(1.2, prob)
    lo, hi = fit.interval(0.90)
    assert hi - lo == pytest.approx(2 * 1.6448536 / math.sqrt(fit.fisher_info), rel=1e-6)
    assert fit.pvalue(fit.beta_mle) == pytest.approx(1.0)
    assert fit.pivot_at(fit.beta_mle) == pytest.approx(0.5)


def test_pivot_and_pvalue_vectorized(prob):
    ys = np.array([0.1, 1.0, 2.0])
    piv = pivot_1d(ys, 0.5, prob)
    assert piv.shape == (3,)
    assert piv[0] == pytest.approx(pivot_1d(0.1, 0.5, prob))
    pv = pvalue_1d(ys, 0.5, prob)
    assert np.allclose(pv, 2 * np.minimum(piv, 1 - piv))


def test_exact_mle_density_matches_selected_law(prob):
    beta, eta = 0.4, 1.0
    c = math.sqrt(2.0)
    norm = stats.norm.sf((prob.tau - beta) / c)

    def cdf_y(y):  # selected law of Y, integrated directly
        f = lambda t: stats.norm.pdf(t - beta) * stats.norm.sf((prob.tau - t) / eta)
        return integrate.quad(f, -np.inf, y)[0] / norm

    total = integrate.quad(lambda m: exact_mle_density(m, beta, prob), -30, 15)[0]
    for m in (-2.0, -0.5, 0.5):
        mass = integrate.quad(lambda t: exact_mle_density(t, beta, prob), -30, m)[0] / total
        assert mass == pytest.approx(cdf_y(grad_alpha(m, prob)), abs=1e-6)
    # the unnormalized density carries the same constant as the Gaussian kernel
    assert total == pytest.approx(math.sqrt(2 * math.pi) * norm, rel=1e-6)


def test_exact_and_rejection_samplers_agree(prob):
    a = sample_selected(-1.0, prob, 4000, np.random.default_rng(1))
    b = sample_selected(-1.0, prob, 4000, np.random.default_rng(2), method="rejection")
    assert stats.ks_2samp(a, b).pvalue > 0.001
    assert np.all(np.isfinite(a))


def test_rejection_cap_raises():
    prob = FileDrawerProblem(12.0, 1.0)
    with pytest.raises(DegenerateSelection):
        sample_selected(-5.0, prob, 10, np.random.default_rng(0), method="rejection",
                        max_attempts=1000)


def test_unknown_sampler_rejected(prob):
    with pytest.raises(DomainError):
        sample_selected(0.0, prob, 10, 0, method="gibbs")


def test_bound_check_needs_enough_draws(prob):
    with pytest.raises(DomainError):
        mse_bound_check(0.0, prob, 10, 0)


def test_rescaled_study_shapes(prob):
    rows = rescaled_study(-0.1, [100, 400], prob, 200, 3)
    assert [r["n"] for r in rows] == [100, 400]
    assert all(r["mle_mse"] >= 0 for r in rows)
    assert rows == rescaled_study(-0.1, [100, 400], prob, 200, 3)

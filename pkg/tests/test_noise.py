import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from noisestab import (ConfigurationError, LambdaUndefinedError, RngStream,
                       bernoulli, bernoulli_sigma_window, discrete, lambda_mc,
                       log_theta_moments, sample, tail_prob, uniform)

BERN_LAMBDA_21 = -0.5 * math.log(abs(4.0 - 2.1 ** 2))  # q=1, sigma=2.1


def test_stream_replay_is_identical():
    a = sample(uniform(), RngStream(42, (3, 0)), size=100)
    b = sample(uniform(), RngStream(42, (3, 0)), size=100)
    assert (a == b).all()


def test_distinct_streams_differ():
    a = sample(uniform(), RngStream(42, (3, 0)), size=100)
    b = sample(uniform(), RngStream(42, (3, 1)), size=100)
    c = sample(uniform(), RngStream(43, (3, 0)), size=100)
    assert not (a == b).all() and not (a == c).all()


@pytest.mark.parametrize("noise", [bernoulli(), uniform(),
                                   discrete((-1.0, 0.25, 1.0), (0.3, 0.3, 0.4))],
                         ids=lambda n: n.kind)
def test_samples_bounded(noise):
    draws = sample(noise, RngStream(7, (0,)), size=10_000_000)
    assert np.max(np.abs(draws)) <= 1.0


def test_sample_moments():
    bern = sample(bernoulli(), RngStream(1, (0,)), size=1_000_000)
    assert abs(np.mean(bern)) < 0.005
    unif = sample(uniform(), RngStream(1, (1,)), size=1_000_000)
    assert abs(np.var(unif) - 1 / 3) < 0.01


def test_bernoulli_moments_closed_form():
    mean, var = log_theta_moments(bernoulli(), 1.0, 2.1)
    assert mean == pytest.approx(0.5 * math.log(0.41), rel=1e-14)
    assert mean == pytest.approx(-0.4457, abs=1e-4)
    v1, v2 = math.log(0.1), math.log(4.1)
    assert var == pytest.approx(0.5 * (v1 ** 2 + v2 ** 2) - mean ** 2, rel=1e-12)


def test_uniform_mean_examples():
    mean, _ = log_theta_moments(uniform(), 0.1, 0.9)
    assert -mean == pytest.approx(0.051, abs=1e-3)
    mean2, _ = log_theta_moments(uniform(), 0.3, 1.3)  # sigma = 1 + q exactly
    assert -mean2 == pytest.approx(0.044, abs=1e-3)


def test_sigma_zero_moments():
    for noise in (bernoulli(), uniform()):
        assert log_theta_moments(noise, 0.4, 0.0) == (math.log(1.4), 0.0)


def test_uniform_mean_matches_quadrature():
    # independent oracle: direct adaptive quadrature of the density integral;
    # cells with the log singularity just outside [-1, 1] make quad warn
    # about slow convergence while still meeting the 1e-8 tolerance
    import warnings
    for q in np.linspace(0.0, 1.0, 20):
        for sigma in np.linspace(0.1, 2.0, 20):
            if abs(sigma - (1 + q)) < 0.02:
                continue
            mean, _ = log_theta_moments(uniform(), q, sigma)
            t0 = (1 + q) / sigma
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", integrate.IntegrationWarning)
                ref, _ = integrate.quad(lambda t: math.log(abs(1 + q - sigma * t)),
                                        -1, 1, points=[t0] if -1 < t0 < 1 else None,
                                        limit=200)
            assert mean == pytest.approx(0.5 * ref, abs=1e-8)


def test_custom_discrete_moments_exact():
    noise = discrete((-1.0, 1.0), (0.25, 0.75))
    mean, var = log_theta_moments(noise, 0.2, 0.5)
    vs = [math.log(abs(1.2 - 0.5 * v)) for v in (-1.0, 1.0)]
    m = 0.25 * vs[0] + 0.75 * vs[1]
    assert mean == pytest.approx(m, rel=1e-14)
    assert var == pytest.approx(0.25 * vs[0] ** 2 + 0.75 * vs[1] ** 2 - m ** 2, rel=1e-12)


def test_degenerate_atom_rejected():
    with pytest.raises(LambdaUndefinedError):
        log_theta_moments(bernoulli(), 1.0, 2.0)  # 1+q-sigma = 0 on an atom


def test_window_examples():
    lo, hi = bernoulli_sigma_window(1.0)
    assert (lo, hi) == pytest.approx((math.sqrt(3), math.sqrt(5)))
    assert lo < 2.1 < hi
    assert bernoulli_sigma_window(0.0) == pytest.approx((0.0, math.sqrt(2)))
    lo3, hi3 = bernoulli_sigma_window(0.3)
    assert (lo3, hi3) == pytest.approx((0.8307, 1.6401), abs=1e-4)
    assert lo3 < 0.85 < hi3 and not lo3 < 0.6 < hi3


@given(q=st.floats(0.0, 3.0, allow_nan=False))
@settings(max_examples=100, deadline=None)
def test_window_boundary_sign_flip(q):
    lo, hi = bernoulli_sigma_window(q)
    steps = [s for s in (lo * 1.001 + 1e-6, hi * 0.999) if s > 0]
    for s in steps:  # just inside: lambda > 0
        assert -log_theta_moments(bernoulli(), q, s)[0] > 0
    for s in (max(lo * 0.999 - 1e-6, 1e-6), hi * 1.001):  # just outside
        if s < lo or s > hi:
            assert -log_theta_moments(bernoulli(), q, s)[0] < 0


def test_lambda_mc_examples():
    est, se = lambda_mc(bernoulli(), 1.0, 2.1, 1_000_000, RngStream(5, (0,)))
    assert abs(est - (-BERN_LAMBDA_21)) <= 3 * se
    mean14, _ = log_theta_moments(uniform(), 0.3, 1.4)
    assert -mean14 == pytest.approx(0.1245, abs=1e-4)
    est2, se2 = lambda_mc(uniform(), 0.3, 1.4, 1_000_000, RngStream(5, (1,)))
    assert abs(est2 - mean14) <= 3 * se2


def test_lambda_mc_sigma_zero_exact():
    est, se = lambda_mc(bernoulli(), 0.5, 0.0, 1000, RngStream(5, (2,)))
    assert est == math.log(1.5) and se == 0.0


def test_lambda_mc_converges_across_seeds():
    mean, _ = log_theta_moments(bernoulli(), 1.0, 2.1)
    hits = 0
    for rep in range(1000):
        est, se = lambda_mc(bernoulli(), 1.0, 2.1, 10_000, RngStream(99, (rep,)))
        hits += abs(est - mean) <= 4 * se
    assert hits >= 990


def test_tail_prob():
    assert tail_prob(bernoulli(), 0.3) == 0.5
    assert tail_prob(uniform(), 0.2) == pytest.approx(0.1)
    assert tail_prob(discrete((-1.0, 0.9), (0.5, 0.5)), 0.05) == 0.0
    with pytest.raises(ConfigurationError):
        tail_prob(uniform(), 1.5)


def test_custom_discrete_validation():
    with pytest.raises(ConfigurationError, match="noise-atoms"):
        discrete((0.1, 0.2), (0.5, 0.6))
    with pytest.raises(ConfigurationError, match="noise-support"):
        discrete((-1.5, 1.0), (0.5, 0.5))

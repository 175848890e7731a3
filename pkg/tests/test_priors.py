import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sparsefactor.conclab import l1_conditional_mean
from sparsefactor.distributions import RngHandle
from sparsefactor.priors import (
    PointMassMixtureSpec,
    ShrinkagePriorSpec,
    log_density_ps,
    sample_pl1,
    sample_ps,
    supp_delta,
)

N = 100_000


def gen(*stream):
    return RngHandle(77, stream).generator


def test_shrinkage_spec_defaults():
    spec = ShrinkagePriorSpec(200)
    assert spec.a_tau == spec.b_tau == pytest.approx(math.log(200))
    assert ShrinkagePriorSpec(2).a_tau == 1.0  # floored so the law keeps a mean
    with pytest.raises(ValueError):
        ShrinkagePriorSpec(0)
    with pytest.raises(ValueError):
        ShrinkagePriorSpec(5, alpha=0.0)


def test_ps_marginal_symmetry():
    draws = sample_ps(ShrinkagePriorSpec(10), gen(1), N)
    theta = draws.theta
    se = theta.std(axis=0) / math.sqrt(N)
    assert np.all(np.abs(theta.mean(axis=0)) < 3 * se)
    np.testing.assert_allclose(draws.gamma.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(draws.tau > 0)


def test_ps_conditional_l1_mean_is_tau():
    g = gen(2)
    gamma = g.dirichlet(np.full(30, 0.2))
    mean, se = l1_conditional_mean(1.7, gamma, N, g)
    assert abs(mean - 1.7) < 3 * se


def test_ps_m1_is_laplace_mixture():
    draws = sample_ps(ShrinkagePriorSpec(1), gen(3), N)
    assert np.all(draws.gamma == 1.0)
    # probability integral transform given tau must be uniform
    u = stats.laplace.cdf(draws.theta[:, 0], scale=draws.tau)
    assert stats.kstest(u, "uniform").pvalue > 1e-3


def test_pl1_inclusion_rate():
    spec = PointMassMixtureSpec(200, kappa=5.0)
    _, pi, inc = sample_pl1(spec, gen(4), N)
    frac = inc.mean(axis=1)
    assert abs(frac.mean() - 1.0 / (spec.beta_b + 1.0)) < 3 * frac.std() / math.sqrt(N)
    assert abs(pi.mean() - 1.0 / (spec.beta_b + 1.0)) < 3 * pi.std() / math.sqrt(N)


def test_pl1_exact_zeros():
    theta, _, inc = sample_pl1(PointMassMixtureSpec(50), gen(5), 2000)
    assert np.all(theta[~inc] == 0.0)
    assert np.all(np.signbit(theta[~inc]) == False)  # noqa: E712  (bitwise +0.0)


@pytest.mark.parametrize("slab,df,cdf", [
    ("laplace", 1.0, stats.laplace.cdf),
    ("student_t", 3.0, lambda x: stats.t.cdf(x, 3.0)),
])
def test_pl1_slab_draws(slab, df, cdf):
    theta, _, inc = sample_pl1(PointMassMixtureSpec(40, kappa=0.01, slab=slab, df=df), gen(6), 20_000)
    slab_draws = theta[inc]
    assert slab_draws.size > 10_000
    assert stats.kstest(slab_draws, cdf).pvalue > 1e-3


def test_supp_delta_examples():
    assert supp_delta(np.array([0.5, 0.0, -2.0]), 1.0).tolist() == [2]
    assert supp_delta(np.array([0.1, -3.0, 2.0]), 0.0).tolist() == [0, 1, 2]
    assert supp_delta(np.array([1.0, -1.0]), 1.0).tolist() == []  # ties are excluded
    with pytest.raises(ValueError):
        supp_delta(np.ones(3), -0.1)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d1=st.floats(0, 3), d2=st.floats(0, 3))
def test_supp_delta_monotone_and_idempotent(seed, d1, d2):
    theta = np.random.default_rng(seed).standard_normal(30)
    lo, hi = min(d1, d2), max(d1, d2)
    assert set(supp_delta(theta, hi)) <= set(supp_delta(theta, lo))
    kept = np.zeros_like(theta)
    idx = supp_delta(theta, lo)
    kept[idx] = theta[idx]
    assert np.array_equal(supp_delta(kept, lo), idx)


def test_log_density_m1_components():
    spec = ShrinkagePriorSpec(1)
    theta, tau = np.array([0.7]), 1.3
    de = -math.log(2 * tau) - 0.7 / tau
    ig = stats.invgamma.logpdf(tau, spec.a_tau, scale=spec.b_tau)
    assert log_density_ps(theta, tau, np.array([1.0]), spec) == pytest.approx(de + ig, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_log_density_sign_flip_invariance(seed):
    g = np.random.default_rng(seed)
    spec = ShrinkagePriorSpec(8)
    theta = g.standard_normal(8)
    gamma = g.dirichlet(np.ones(8))
    signs = g.choice([-1.0, 1.0], size=8)
    assert log_density_ps(theta * signs, 0.8, gamma, spec) == log_density_ps(theta, 0.8, gamma, spec)


def test_log_density_boundary_gamma():
    spec = ShrinkagePriorSpec(2)
    with pytest.warns(RuntimeWarning):
        assert log_density_ps(np.zeros(2), 1.0, np.array([1.0, 0.0]), spec) == -np.inf


def test_log_density_m2_normalizes():
    """Product quadrature over (theta1, theta2, tau, gamma1) of the joint density."""
    spec = ShrinkagePriorSpec(2)
    # theta_j on rays scaled by tau gamma_j: Gauss-Laguerre nodes on each half-line
    lag_x, lag_w = np.polynomial.laguerre.laggauss(3)
    # gamma1 in (0, 1/2] and [1/2, 1): gamma = t^4 / 2 removes the edge singularity
    leg_x, leg_w = np.polynomial.legendre.leggauss(20)
    t = 0.5 * (leg_x + 1.0)
    g_half = 0.5 * t**4
    g_jac = 0.5 * 4 * t**3 * 0.5 * leg_w
    gammas = np.concatenate([g_half, 1.0 - g_half])
    gweights = np.concatenate([g_jac, g_jac])
    # tau = exp(v), v over [-6, 6] and [6, 45]
    v_nodes, v_weights = [], []
    for a, b, k in ((-6.0, 6.0, 40), (6.0, 45.0, 30)):
        x, w = np.polynomial.legendre.leggauss(k)
        v_nodes.append(0.5 * (b - a) * x + 0.5 * (a + b))
        v_weights.append(0.5 * (b - a) * w)
    v_nodes, v_weights = np.concatenate(v_nodes), np.concatenate(v_weights)
    total = 0.0
    for g1, wg in zip(gammas, gweights):
        gamma = np.array([g1, 1.0 - g1])
        for v, wv in zip(v_nodes, v_weights):
            tau = math.exp(v)
            scale = tau * gamma
            inner = 0.0
            for s1 in (-1.0, 1.0):
                for s2 in (-1.0, 1.0):
                    for x1, w1 in zip(lag_x, lag_w):
                        for x2, w2 in zip(lag_x, lag_w):
                            theta = np.array([s1 * x1 * scale[0], s2 * x2 * scale[1]])
                            dens = math.exp(log_density_ps(theta, tau, gamma, spec) + x1 + x2)
                            inner += w1 * w2 * dens * scale[0] * scale[1]
            total += wg * wv * tau * inner
    assert total == pytest.approx(1.0, abs=1e-3)

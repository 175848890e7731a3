"""Sampler-versus-quadrature KS cases: three parameter settings per sampler.

Each case is (id, draw, logpdf, lower, upper): ``draw(gen, size)`` returns a
transformed sample whose unnormalized log-density is ``logpdf`` on
(lower, upper). Log or logit transforms keep small-shape densities
integrable near their boundaries.
"""
import math

import numpy as np
from scipy import special as sp

from sparsefactor.distributions import (
    log_gamma_small_shape,
    sample_beta,
    sample_de,
    sample_dirichlet,
    sample_factor_mvn,
    sample_gamma,
    sample_gig,
    sample_invgamma,
    sample_invgauss,
)
from sparsefactor.model import FactorModelParams

INF = math.inf


def _de(scale):
    return (f"de-{scale}", lambda g, n: sample_de(scale, g, n), lambda t: -abs(t) / scale, -INF, INF)


def _gamma(shape, rate):
    return (
        f"gamma-{shape}-{rate}",
        lambda g, n: np.log(sample_gamma(shape, rate, g, n)),
        lambda u: shape * u - rate * math.exp(u),
        -INF, INF,
    )


def _beta(a, b):
    # density of the logit: x^a (1-x)^b with x = expit(u)
    return (
        f"beta-{a}-{b}",
        lambda g, n: sp.logit(sample_beta(a, b, g, n)),
        lambda u: -a * np.logaddexp(0, -u) - b * np.logaddexp(0, u),
        -INF, INF,
    )


def _dirichlet(label, alphas):
    a1, rest = alphas[0], sum(alphas) - alphas[0]
    # log of a Beta(a1, rest) coordinate
    return (
        f"dirichlet-{label}",
        lambda g, n: sample_dirichlet(alphas, g, n, log=True)[:, 0],
        lambda u: a1 * u + (rest - 1) * math.log1p(-math.exp(u)) if u < 0 else -INF,
        -INF, 0.0,
    )


def _log_gamma(shape):
    return (f"loggamma-{shape}", lambda g, n: log_gamma_small_shape(shape, g, n), lambda u: shape * u - math.exp(u), -INF, INF)


def _invgamma(a, b, trunc=None):
    lo, hi = (-INF, INF) if trunc is None else (math.log(trunc[0]) if trunc[0] > 0 else -INF, math.log(trunc[1]))
    return (
        f"invgamma-{a}-{b}-{trunc}",
        lambda g, n: np.log(sample_invgamma(a, b, g, n, truncation=trunc)),
        lambda u: -a * u - b * math.exp(-u),
        lo, hi,
    )


def _gig(index, chi, psi):
    return (
        f"gig-{index}-{chi}-{psi}",
        lambda g, n: sample_gig(index, chi, psi, g, n, log=True),
        lambda u: index * u - 0.5 * (chi * math.exp(-u) + psi * math.exp(u)),
        -INF, INF,
    )


def _invgauss(mean, shape):
    # Wald density in log coordinates: x^{-1/2} exp(-shape (x - mean)^2 / (2 mean^2 x))
    return (
        f"invgauss-{mean}-{shape}",
        lambda g, n: np.log(sample_invgauss(mean, shape, g, n)),
        lambda u: -0.5 * u - shape * (math.exp(u) - mean) ** 2 / (2 * mean**2 * math.exp(u)),
        -INF, INF,
    )


def _factor_mvn(sigma2, col):
    lam = np.random.default_rng(9).standard_normal((5, 2))
    var = float(lam[col] @ lam[col] + sigma2)
    return (
        f"factor-mvn-{sigma2}-{col}",
        lambda g, n: sample_factor_mvn(FactorModelParams(lam, sigma2), n, g)[:, col],
        lambda t: -0.5 * t * t / var,
        -INF, INF,
    )


KS_CASES = [
    *(_de(s) for s in (0.5, 1.0, 3.0)),
    *(_gamma(a, r) for a, r in ((0.3, 1.0), (2.0, 0.5), (10.0, 3.0))),
    *(_beta(a, b) for a, b in ((0.5, 0.5), (1.0, 201.0), (2.0, 5.0))),
    _dirichlet("flat3", (1.0, 1.0, 1.0)),
    _dirichlet("mixed3", (2.0, 3.0, 5.0)),
    _dirichlet("sparse100", (0.005,) * 100),
    *(_log_gamma(a) for a in (0.005, 0.5, 3.0)),
    _invgamma(3.0, 2.0),
    _invgamma(0.5, 1.0),
    _invgamma(2.0, 1.0, (0.0, 10.0)),
    _invgamma(2.0, 1.0, (0.5, 0.6)),
    *(_gig(*a) for a in ((0.3, 1.0, 2.0), (-2.5, 0.01, 5.0), (-0.99, 4e-3, 2.0))),
    *(_invgauss(m, s) for m, s in ((1.0, 1.0), (0.1, 2.0), (5.0, 0.5))),
    *(_factor_mvn(s2, c) for s2, c in ((1.0, 0), (0.3, 2), (4.0, 4))),
]

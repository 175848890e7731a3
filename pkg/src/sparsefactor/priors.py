"""Shrinkage (Dirichlet-Laplace type), point-mass mixture and Gaussian priors on loadings."""
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special as sp

from .distributions import as_generator, sample_dirichlet, sample_invgamma

SLABS = ("laplace", "student_t")


@dataclass(frozen=True)
class ShrinkagePriorSpec:
    """theta_j ~ DE(tau * gamma_j), tau ~ IG(a_tau, b_tau), gamma ~ Dir(alpha/m, ..., alpha/m).

    The global-scale hyperparameters default to log m, floored at 1 so that
    the law stays proper (and has a mean) for m < 3.
    """

    m: int
    alpha: float = 0.5
    a_tau: float | None = None
    b_tau: float | None = None

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m}")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        default = max(np.log(self.m), 1.0)
        for name in ("a_tau", "b_tau"):
            val = getattr(self, name)
            object.__setattr__(self, name, float(default if val is None else val))
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class PointMassMixtureSpec:
    """theta_j ~ (1 - pi) delta_0 + pi g, pi ~ Beta(1, kappa * rows + 1).

    ``rows`` is the count multiplying kappa (the number of loading rows when
    m = p k); it defaults to m.
    """

    m: int
    kappa: float = 1.0
    slab: str = "laplace"
    rows: int | None = None
    df: float = 1.0

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"m must be a positive integer, got {self.m}")
        if not self.kappa > 0:
            raise ValueError("kappa must be > 0")
        if self.slab not in SLABS:
            raise ValueError(f"slab must be one of {SLABS}, got {self.slab!r}")
        if not self.df > 0:
            raise ValueError("df must be > 0")
        object.__setattr__(self, "rows", int(self.m if self.rows is None else self.rows))

    @property
    def beta_b(self):
        return self.kappa * self.rows + 1.0


@dataclass(frozen=True)
class ShrinkageDraw:
    theta: np.ndarray
    tau: float
    gamma: np.ndarray
    log_gamma: np.ndarray


def sample_ps(spec, rng, size=None):
    """Draw (theta, tau, gamma) from the shrinkage prior; ``size`` adds a leading batch axis."""
    gen = as_generator(rng)
    n = 1 if size is None else int(size)
    tau = spec.b_tau / gen.standard_gamma(spec.a_tau, size=n)
    log_gamma = sample_dirichlet(np.full(spec.m, spec.alpha / spec.m), gen, size=n, log=True)
    gamma = np.exp(log_gamma)
    theta = tau[:, None] * gamma * gen.laplace(0.0, 1.0, size=(n, spec.m))
    if size is None:
        return ShrinkageDraw(theta[0], float(tau[0]), gamma[0], log_gamma[0])
    return ShrinkageDraw(theta, tau, gamma, log_gamma)


def sample_slab(spec, rng, size=None):
    gen = as_generator(rng)
    if spec.slab == "laplace":
        return gen.laplace(0.0, 1.0, size=size)
    return gen.standard_t(spec.df, size=size)


def slab_logpdf(spec, x):
    x = np.asarray(x, dtype=float)
    if spec.slab == "laplace":
        return -np.abs(x) - np.log(2.0)
    nu = spec.df
    return (
        sp.gammaln((nu + 1) / 2) - sp.gammaln(nu / 2) - 0.5 * np.log(nu * np.pi)
        - (nu + 1) / 2 * np.log1p(x * x / nu)
    )


def sample_pl1(spec, rng, size=None):
    """Return (theta, pi, inclusion); excluded coordinates are exactly 0."""
    gen = as_generator(rng)
    n = 1 if size is None else int(size)
    pi = gen.beta(1.0, spec.beta_b, size=n)
    inclusion = gen.random((n, spec.m)) < pi[:, None]
    theta = np.where(inclusion, sample_slab(spec, gen, size=(n, spec.m)), 0.0)
    if size is None:
        return theta[0], float(pi[0]), inclusion[0]
    return theta, pi, inclusion


def sample_p0(m, rng, size=None):
    """iid N(0, 1) loadings."""
    gen = as_generator(rng)
    return gen.standard_normal(m if size is None else (int(size), m))


def sample_sigma2(prior, rng, size=None):
    """Residual-variance prior: ('gamma', a, b) rate-parametrized, or ('invgamma', a, b, upper)."""
    gen = as_generator(rng)
    kind = prior[0]
    if kind == "gamma":
        return gen.gamma(prior[1], 1.0 / prior[2], size=size)
    if kind == "invgamma":
        return sample_invgamma(prior[1], prior[2], gen, size=size, truncation=(0.0, prior[3]))
    raise ValueError(f"unknown sigma2 prior {kind!r}")


def supp_delta(theta, delta):
    """Indices j with |theta_j| > delta (strict)."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    return np.flatnonzero(np.abs(np.asarray(theta)) > delta)


def log_density_ps(theta, tau, gamma, spec):
    """Joint log-density of (theta, tau, gamma) under the shrinkage prior.

    gamma is taken with respect to Lebesgue measure on its first m-1
    coordinates. Boundary gamma (a zero coordinate) returns -inf with a
    RuntimeWarning.
    """
    theta = np.asarray(theta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if theta.shape != (spec.m,) or gamma.shape != (spec.m,):
        raise ValueError("theta and gamma must have length m")
    if not tau > 0:
        raise ValueError("tau must be > 0")
    if abs(np.sum(gamma) - 1.0) > 1e-9 or np.any(gamma < 0):
        raise ValueError("gamma must lie on the simplex")
    if np.any(gamma == 0):
        warnings.warn("gamma on the simplex boundary; density taken as -inf", RuntimeWarning)
        return -np.inf
    scale = tau * gamma
    log_theta = np.sum(-np.log(2.0 * scale) - np.abs(theta) / scale)
    a, b = spec.a_tau, spec.b_tau
    log_tau = a * np.log(b) - sp.gammaln(a) - (a + 1.0) * np.log(tau) - b / tau
    conc = spec.alpha / spec.m
    log_gamma = sp.gammaln(spec.alpha) - spec.m * sp.gammaln(conc) + np.sum((conc - 1.0) * np.log(gamma))
    return float(log_theta + log_tau + log_gamma)

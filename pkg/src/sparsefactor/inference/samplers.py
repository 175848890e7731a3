"""Gibbs sweeps for the factor model under the three loading priors.

Shrinkage prior (regime "ps"). The DE kernel is written as a normal scale
mixture, lambda | v ~ N(0, v), v ~ Exp(rate 1 / (2 psi^2)), psi = tau * gamma.
One sweep is

    eta | .            Gaussian, precision I + L'L / s2
    rows of L | v      Gaussian, precision diag(1/v_j) + H'H / s2
    gamma | L, tau     whole-vector independence MH (good for small m)
    gamma, tau | L     augmented Metropolis-within-Gibbs (scales with m)
                       both with v integrated out
    v | L, tau, gamma  psi^2 / v ~ InvGauss(psi / |lambda|, 1)
    s2 | .             giG(a - np/2, RSS, 2b) under the gamma(a, b) prior

The (gamma, tau, v) block targets p(gamma, tau | L) and then redraws v from
its exact conditional, so v must come last.
"""
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special as sp
from scipy.linalg import solve_triangular

from ..distributions import as_generator, sample_dirichlet, sample_gig, sample_invgamma
from ..special import log_kv
from ..priors import PointMassMixtureSpec, ShrinkagePriorSpec, sample_pl1, sample_ps, sample_slab

REGIMES = ("ps", "pl1", "p0")

# log(gamma_j) is floored here; below it entries are numerically zero anyway
LOG_GAMMA_FLOOR = -250.0
# |lambda| floor for the giG proposal and the tau update (only prevents exact zeros)
ABS_LAMBDA_FLOOR = 1e-300
# cap on psi / |lambda| in the inverse-Gaussian draw
MAX_IG_MEAN = 1e12
V_BOUNDS = (1e-300, 1e300)


@dataclass(frozen=True)
class FactorPrior:
    """Loadings prior plus the residual-variance prior for a p x k model.

    ``sigma2_a, sigma2_b`` parametrize gamma(a, rate b) for "ps"/"pl1" and
    IG(a, b) truncated to [0, sigma2_upper] for "p0".
    """

    regime: str
    p: int
    k: int
    alpha: float = 0.5
    a_tau: float | None = None
    b_tau: float | None = None
    kappa: float = 1.0
    slab: str = "laplace"
    df: float = 1.0
    sigma2_a: float = 1.0
    sigma2_b: float = 1.0
    sigma2_upper: float = 10.0

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if not (self.p >= self.k >= 1):
            raise ValueError("need p >= k >= 1")
        if not (self.sigma2_a > 0 and self.sigma2_b > 0 and self.sigma2_upper > 0):
            raise ValueError("sigma2 hyperparameters must be > 0")

    @property
    def m(self):
        return self.p * self.k

    @property
    def shrinkage(self):
        return ShrinkagePriorSpec(self.m, self.alpha, self.a_tau, self.b_tau)

    @property
    def mixture(self):
        return PointMassMixtureSpec(self.m, self.kappa, self.slab, rows=self.p, df=self.df)


@dataclass
class GibbsState:
    loadings: np.ndarray
    factors: np.ndarray
    sigma2: float
    v: np.ndarray | None = None
    tau: float | None = None
    log_gamma: np.ndarray | None = None
    z: np.ndarray | None = None
    pi: float | None = None
    stats: dict = field(default_factory=lambda: {"gamma_proposed": 0, "gamma_accepted": 0, "clamped": 0})

    @property
    def gamma(self):
        return None if self.log_gamma is None else np.exp(self.log_gamma)

    def copy(self):
        return replace(
            self,
            loadings=self.loadings.copy(),
            factors=self.factors.copy(),
            v=None if self.v is None else self.v.copy(),
            log_gamma=None if self.log_gamma is None else self.log_gamma.copy(),
            z=None if self.z is None else self.z.copy(),
            stats=dict(self.stats),
        )


# ---------------------------------------------------------------- shared blocks


def update_factors(state, data, gen):
    lam, s2 = state.loadings, state.sigma2
    k = lam.shape[1]
    prec = np.eye(k) + lam.T @ lam / s2
    chol = np.linalg.cholesky(prec)
    rhs = data @ lam / s2
    mean = solve_triangular(chol.T, solve_triangular(chol, rhs.T, lower=True), lower=False).T
    noise = solve_triangular(chol.T, gen.standard_normal((k, data.shape[0])), lower=False).T
    state.factors = mean + noise


def update_rows(state, data, gen, prior_var):
    """Row-wise Gaussian update of the loadings given per-entry prior variances (p x k)."""
    h, s2 = state.factors, state.sigma2
    p, k = state.loadings.shape
    gram = h.T @ h / s2
    cross = data.T @ h / s2
    prec = gram[None, :, :] + np.einsum("jh,hl->jhl", 1.0 / prior_var, np.eye(k))
    chol = np.linalg.cholesky(prec)
    mean = np.linalg.solve(prec, cross[:, :, None])[:, :, 0]
    z = gen.standard_normal((p, k, 1))
    noise = np.linalg.solve(np.transpose(chol, (0, 2, 1)), z)[:, :, 0]
    state.loadings = mean + noise


def residual_ss(state, data):
    resid = data - state.factors @ state.loadings.T
    return float(np.sum(resid * resid))


def update_sigma2_gamma_prior(state, data, prior, gen):
    n, p = data.shape
    rss = residual_ss(state, data)
    state.sigma2 = float(sample_gig(prior.sigma2_a - 0.5 * n * p, rss, 2.0 * prior.sigma2_b, gen))


def update_sigma2_truncated_ig(state, data, prior, gen):
    n, p = data.shape
    rss = residual_ss(state, data)
    state.sigma2 = sample_invgamma(
        prior.sigma2_a + 0.5 * n * p, prior.sigma2_b + 0.5 * rss, gen,
        truncation=(0.0, prior.sigma2_upper),
    )


# ---------------------------------------------------------------- shrinkage prior


def _log_abs_loadings(state):
    a = np.abs(state.loadings)
    clamped = a < ABS_LAMBDA_FLOOR
    state.stats["clamped"] += int(np.count_nonzero(clamped))
    return np.log(np.where(clamped, ABS_LAMBDA_FLOOR, a))


def _gamma_log_weight(log_b, nu):
    """log of target / proposal density for the normalized-giG proposal, as a function of B."""
    if not np.isfinite(log_b) or log_b > 700:
        return -np.inf
    b = np.exp(log_b)
    return -b - 0.5 * nu * (np.log(2.0) + log_b) - log_kv(nu, np.sqrt(2.0 * b))


def update_gamma(state, prior, gen, log_abs=None):
    """Independence MH on gamma | L, tau (v integrated out): propose gamma' = T / sum(T),
    T_j ~ giG(alpha/m - 1, 2|lambda_j|/tau, 1).

    Under this proposal the gamma_j powers of target and proposal cancel and
    the weight depends on gamma only through B = sum |lambda_j| / (tau gamma_j).
    Acceptance is good for small m and decays as m grows, where
    update_global_local does the work.
    """
    m = prior.m
    if log_abs is None:
        log_abs = _log_abs_loadings(state)
    log_tau = np.log(state.tau)
    chi = 2.0 * np.exp(log_abs - log_tau)
    log_t = sample_gig(prior.alpha / m - 1.0, chi, 1.0, gen, log=True)
    log_prop = np.maximum(log_t - sp.logsumexp(log_t), LOG_GAMMA_FLOOR)
    log_prop -= sp.logsumexp(log_prop)
    nu = prior.alpha - m
    log_b_cur = sp.logsumexp(log_abs - state.log_gamma) - log_tau
    log_b_new = sp.logsumexp(log_abs - log_prop) - log_tau
    log_ratio = _gamma_log_weight(log_b_new, nu) - _gamma_log_weight(log_b_cur, nu)
    if np.isnan(log_ratio):
        log_ratio = -np.inf
    if np.log(gen.random()) < log_ratio:
        state.log_gamma = log_prop


def update_global_local(state, prior, gen, log_abs=None, freeze_tau=False):
    """Joint move on (gamma, tau) given L with v integrated out.

    Augment with S ~ Gamma(alpha, 1) independent of everything else and set
    T = S gamma (iid Gamma(alpha/m, 1) a priori) and c = tau / S. Given c,
    T has density prod_j giG(T_j; alpha/m - 1, 2|lambda_j|/c, 2) times
    h(S) = S^(-a) exp(-b / (c S)) with S = sum T. Each T_j gets an
    independence proposal from its own giG factor, accepted with probability
    h(S_-j + T_j') / h(S_-j + T_j). Then c | T ~ IG(a + m, b / S + sum |lambda_j| / T_j)
    exactly, and the move maps back through gamma = T / S, tau = c S.
    """
    m = prior.m
    a, b = prior.shrinkage.a_tau, prior.shrinkage.b_tau
    if log_abs is None:
        log_abs = _log_abs_loadings(state)
    shape = state.log_gamma.shape
    log_s0 = float(np.log(gen.standard_gamma(prior.alpha)))
    log_c = float(np.log(state.tau)) - log_s0
    chi = 2.0 * np.exp(log_abs - log_c)
    # proposals and current values in units of S0 (current gamma sums to 1)
    log_u_new = np.maximum(sample_gig(prior.alpha / m - 1.0, chi, 2.0, gen, log=True) - log_s0, LOG_GAMMA_FLOOR)
    log_u = state.log_gamma.ravel().copy()
    u_cur = np.exp(log_u).tolist()
    u_new = np.exp(log_u_new.ravel()).tolist()
    log_w = np.log(gen.random(m)).tolist()
    bc = b * np.exp(-log_c - log_s0)
    total = 1.0
    accepted = []
    for j in range(m):
        rest = total - u_cur[j]
        if rest < 0.0:
            rest = 0.0
        new = rest + u_new[j]
        if log_w[j] < -a * (math.log(new) - math.log(total)) - bc * (1.0 / new - 1.0 / total):
            total = new
            accepted.append(j)
    acc = np.asarray(accepted, dtype=int)
    log_u[acc] = log_u_new.ravel()[acc]
    state.stats["gamma_proposed"] += m
    state.stats["gamma_accepted"] += acc.size
    log_r = sp.logsumexp(log_u)
    state.log_gamma = np.maximum(log_u - log_r, LOG_GAMMA_FLOOR).reshape(shape)
    state.log_gamma -= sp.logsumexp(state.log_gamma)
    if freeze_tau:
        return
    log_s = log_s0 + log_r
    rate = b * np.exp(-log_s) + np.exp(sp.logsumexp(log_abs.ravel() - log_u - log_s0))
    log_c = np.log(rate) - np.log(gen.standard_gamma(a + m))
    state.tau = float(np.exp(log_c + log_s))


def update_local_scales(state, gen, log_abs=None):
    if log_abs is None:
        log_abs = _log_abs_loadings(state)
    log_psi = np.log(state.tau) + state.log_gamma
    mean = np.minimum(np.exp(log_psi - log_abs), MAX_IG_MEAN)
    w = gen.wald(mean, 1.0)
    state.v = np.clip(np.exp(2.0 * log_psi - np.log(w)), *V_BOUNDS)


def gibbs_step_ps(state, data, prior, rng, freeze_tau=False):
    gen = as_generator(rng)
    update_factors(state, data, gen)
    update_rows(state, data, gen, state.v)
    log_abs = _log_abs_loadings(state)
    if prior.m > 1:
        update_gamma(state, prior, gen, log_abs)
    update_global_local(state, prior, gen, log_abs, freeze_tau)
    update_local_scales(state, gen, log_abs)
    update_sigma2_gamma_prior(state, data, prior, gen)
    return state


# ---------------------------------------------------------------- point-mass mixture prior


def _slab_scales(spec, lam, z, gen):
    """Normal-mixture scales of the slab: exact conditional where included, prior elsewhere."""
    shape = lam.shape
    if spec.slab == "laplace":
        prior_draw = gen.exponential(2.0, size=shape)
        a = np.maximum(np.abs(lam), ABS_LAMBDA_FLOOR)
        w = gen.wald(np.minimum(1.0 / a, MAX_IG_MEAN), 1.0)
        with np.errstate(divide="ignore"):
            post_draw = 1.0 / w
    else:
        nu = spec.df
        prior_draw = (nu / 2.0) / gen.standard_gamma(nu / 2.0, size=shape)
        post_draw = ((nu + lam * lam) / 2.0) / gen.standard_gamma((nu + 1.0) / 2.0, size=shape)
    return np.clip(np.where(z, post_draw, prior_draw), *V_BOUNDS)


def gibbs_step_pl1(state, data, prior, rng):
    """Column-at-a-time collapsed (Z, lambda) updates; rows are conditionally independent given eta."""
    gen = as_generator(rng)
    spec = prior.mixture
    update_factors(state, data, gen)
    h, s2 = state.factors, state.sigma2
    lam = state.loadings
    resid = data - h @ lam.T
    log_prior_odds = np.log(state.pi) - np.log1p(-state.pi)
    for col in range(lam.shape[1]):
        hc = h[:, col]
        resid += np.outer(hc, lam[:, col])
        a = float(hc @ hc) / s2
        b = resid.T @ hc / s2
        v = state.v[:, col]
        prec = a + 1.0 / v
        log_odds = log_prior_odds - 0.5 * np.log1p(v * a) + 0.5 * b * b / prec
        include = gen.random(lam.shape[0]) < sp.expit(log_odds)
        draw = b / prec + gen.standard_normal(lam.shape[0]) / np.sqrt(prec)
        lam[:, col] = np.where(include, draw, 0.0)
        state.z[:, col] = include
        resid -= np.outer(hc, lam[:, col])
    state.loadings = lam
    state.v = _slab_scales(spec, lam, state.z, gen)
    n_in = int(np.count_nonzero(state.z))
    state.pi = float(gen.beta(1.0 + n_in, spec.beta_b + prior.m - n_in))
    update_sigma2_gamma_prior(state, data, prior, gen)
    return state


# ---------------------------------------------------------------- Gaussian prior


def gibbs_step_p0(state, data, prior, rng):
    gen = as_generator(rng)
    update_factors(state, data, gen)
    update_rows(state, data, gen, np.ones_like(state.loadings))
    update_sigma2_truncated_ig(state, data, prior, gen)
    return state


STEPS = {"ps": gibbs_step_ps, "pl1": gibbs_step_pl1, "p0": gibbs_step_p0}


def gibbs_step(state, data, prior, rng):
    return STEPS[prior.regime](state, data, prior, rng)


# ---------------------------------------------------------------- initialization


def sample_prior_state(prior, n, rng):
    """A joint draw of every parameter and latent from the prior (factors included)."""
    gen = as_generator(rng)
    p, k, m = prior.p, prior.k, prior.m
    state = GibbsState(np.zeros((p, k)), gen.standard_normal((n, k)), 1.0)
    if prior.regime == "ps":
        spec = prior.shrinkage
        state.tau = float(spec.b_tau / gen.standard_gamma(spec.a_tau))
        log_gamma = sample_dirichlet(np.full(m, spec.alpha / m), gen, log=True)
        log_gamma = np.maximum(log_gamma, LOG_GAMMA_FLOOR)
        state.log_gamma = (log_gamma - sp.logsumexp(log_gamma)).reshape(p, k)
        psi = state.tau * np.exp(state.log_gamma)
        state.v = np.clip(gen.exponential(2.0 * psi * psi), *V_BOUNDS)
        state.loadings = np.sqrt(state.v) * gen.standard_normal((p, k))
        state.sigma2 = float(gen.gamma(prior.sigma2_a, 1.0 / prior.sigma2_b))
    elif prior.regime == "pl1":
        spec = prior.mixture
        state.pi = float(gen.beta(1.0, spec.beta_b))
        state.z = gen.random((p, k)) < state.pi
        slab = sample_slab(spec, gen, size=(p, k))
        state.loadings = np.where(state.z, slab, 0.0)
        state.v = _slab_scales(spec, state.loadings, state.z, gen)
        state.sigma2 = float(gen.gamma(prior.sigma2_a, 1.0 / prior.sigma2_b))
    else:
        state.loadings = gen.standard_normal((p, k))
        state.sigma2 = sample_invgamma(
            prior.sigma2_a, prior.sigma2_b, gen, truncation=(0.0, prior.sigma2_upper)
        )
    return state


def sample_prior_batch(prior, size, rng):
    """``size`` independent (loadings, sigma2) prior draws as arrays (size, p, k) and (size,)."""
    gen = as_generator(rng)
    shape = (size, prior.p, prior.k)
    if prior.regime == "ps":
        lam = sample_ps(prior.shrinkage, gen, size=size).theta.reshape(shape)
    elif prior.regime == "pl1":
        lam = sample_pl1(prior.mixture, gen, size=size)[0].reshape(shape)
    else:
        lam = gen.standard_normal(shape)
    if prior.regime == "p0":
        s2 = sample_invgamma(
            prior.sigma2_a, prior.sigma2_b, gen, size=size, truncation=(0.0, prior.sigma2_upper)
        )
    else:
        s2 = gen.gamma(prior.sigma2_a, 1.0 / prior.sigma2_b, size=size)
    return lam, s2


def initial_state(prior, data, rng, method="pca"):
    """Starting state: a prior draw, or principal components of the data ("pca").

    The PCA start keeps every loading away from zero so the shrinkage
    sampler can prune, rather than starting at the prior's near-zero draws.
    """
    gen = as_generator(rng)
    n, p = data.shape
    if method == "prior" or n == 0:
        return sample_prior_state(prior, n, gen)
    if method != "pca":
        raise ValueError(f"unknown init method {method!r}")
    k = prior.k
    _, svals, vt = np.linalg.svd(data, full_matrices=False)
    total = float(np.sum(data * data))
    top = float(np.sum(svals[:k] ** 2))
    sigma2 = max((total - top) / max(n * (p - k), 1), 1e-3 * total / (n * p))
    if prior.regime == "p0":
        sigma2 = min(sigma2, 0.99 * prior.sigma2_upper)
    scale = np.sqrt(np.maximum(svals[:k] ** 2 / n - sigma2, 1e-2 * sigma2))
    lam = vt[:k].T * scale
    state = GibbsState(lam, np.zeros((n, k)), sigma2)
    if prior.regime == "ps":
        a = np.maximum(np.abs(lam), ABS_LAMBDA_FLOOR)
        state.tau = 1.0
        state.log_gamma = np.log(a) - sp.logsumexp(np.log(a))
        state.log_gamma = np.maximum(state.log_gamma, LOG_GAMMA_FLOOR)
        state.log_gamma -= sp.logsumexp(state.log_gamma)
        update_local_scales(state, gen)
    elif prior.regime == "pl1":
        state.z = np.ones((p, k), dtype=bool)
        state.pi = 0.5
        state.v = _slab_scales(prior.mixture, lam, state.z, gen)
    update_factors(state, data, gen)
    return state

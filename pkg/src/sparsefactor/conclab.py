"""Monte Carlo and quadrature checks of prior-concentration and quadratic-form tail bounds.

Probabilities that are too small for direct simulation are estimated by
conditioning on everything except the global scale tau, whose inverse-gamma
tail is then evaluated exactly.
"""
import math
from dataclasses import dataclass

import numpy as np
from scipy import special as sp
from scipy import stats

from .distributions import as_generator
from .priors import PointMassMixtureSpec, ShrinkagePriorSpec, sample_p0, sample_pl1, sample_ps
from .special import log_gammainc_lower, log_invgamma_sf, logmeanexp

CSV_COLUMNS = ("lemma", "p", "s", "epsilon_or_t", "estimate", "ci_lo", "ci_hi", "bound", "seed")
PRIOR_TAGS = ("ps", "p0", "pl1")
# two-sided normal quantile for "within 3 SE" statements
Z3 = 3.0
EULER_GAMMA = 0.57721566490153286061


def wilson_interval(hits, trials, z=1.96):
    """Wilson score interval for a binomial proportion."""
    if trials <= 0:
        raise ValueError("trials must be > 0")
    level = 2.0 * stats.norm.cdf(z) - 1.0
    ci = stats.binomtest(int(hits), int(trials)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def _log(x):
    with np.errstate(divide="ignore"):
        return float(np.log(x))


# ---------------------------------------------------------------- small-ball probabilities


@dataclass(frozen=True)
class SmallBallQuery:
    """P(||theta - theta0||_2 < epsilon) under a loadings prior of dimension len(theta0).

    ``hyper`` holds prior hyperparameters (alpha, a_tau, b_tau for "ps";
    kappa, slab, df for "pl1"). The l1 size of theta0 is checked against
    4 s log(s + 2), and the ratio is kept in ``l1_ratio``.
    """

    prior: str
    theta0: np.ndarray
    epsilon: float
    replicates: int = 100_000
    hyper: tuple = ()

    def __post_init__(self):
        if self.prior not in PRIOR_TAGS:
            raise ValueError(f"prior must be one of {PRIOR_TAGS}, got {self.prior!r}")
        theta0 = np.asarray(self.theta0, dtype=float)
        if theta0.ndim != 1 or theta0.size < 1 or not np.all(np.isfinite(theta0)):
            raise ValueError("theta0 must be a finite 1-d vector")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if np.sum(np.abs(theta0)) > self.l1_limit_value(theta0):
            raise ValueError(
                f"||theta0||_1 = {np.sum(np.abs(theta0)):.4g} exceeds 4 s log(s + 2) = "
                f"{self.l1_limit_value(theta0):.4g}"
            )
        object.__setattr__(self, "theta0", theta0)
        object.__setattr__(self, "hyper", tuple(dict(self.hyper).items()))

    @staticmethod
    def l1_limit_value(theta0):
        s = max(int(np.count_nonzero(theta0)), 1)
        return 4.0 * s * math.log(s + 2.0)

    @property
    def p(self):
        return self.theta0.size

    @property
    def s(self):
        return int(np.count_nonzero(self.theta0))

    @property
    def l1_ratio(self):
        return float(np.sum(np.abs(self.theta0)) / self.l1_limit_value(self.theta0))

    def draw(self, size, gen):
        hyper = dict(self.hyper)
        if self.prior == "ps":
            return sample_ps(ShrinkagePriorSpec(self.p, **hyper), gen, size).theta
        if self.prior == "pl1":
            return sample_pl1(PointMassMixtureSpec(self.p, **hyper), gen, size)[0]
        return sample_p0(self.p, gen, size)


@dataclass(frozen=True)
class SmallBallResult:
    log_prob: float
    log_ci_lo: float
    log_ci_hi: float
    hits: int
    draws: int
    upper_bound_only: bool  # fewer than the requested hits before the draw cap


def smallball_mc(query, rng, batch=20_000, min_hits=20, cap=10**8):
    """Direct Monte Carlo estimate of the log small-ball probability with a Wilson interval.

    Starts from ``query.replicates`` draws and doubles the total until
    ``min_hits`` hits are seen or ``cap`` draws are spent. A capped run
    reports the log of the Wilson upper limit as its estimate and is flagged.
    """
    gen = as_generator(rng)
    eps2 = query.epsilon**2
    hits = draws = 0
    target = query.replicates
    while True:
        while draws < target:
            b = min(batch, target - draws)
            theta = query.draw(b, gen)
            hits += int(np.count_nonzero(np.sum((theta - query.theta0) ** 2, axis=1) < eps2))
            draws += b
        if hits >= min_hits or draws >= cap:
            break
        target = min(2 * draws, cap)
    lo, hi = wilson_interval(hits, draws)
    capped = hits < min_hits
    est = hi if capped else hits / draws
    return SmallBallResult(_log(est), _log(lo), _log(hi), hits, draws, capped)


def normal_smallball_logprob(theta0, epsilon):
    """Exact log P(||theta - theta0|| < epsilon) for theta ~ N(0, I).

    ||theta - theta0||^2 is noncentral chi-square with df = dim and
    noncentrality ||theta0||^2; its CDF is a Poisson mixture of central
    chi-square CDFs, summed here on the log scale.
    """
    theta0 = np.asarray(theta0, dtype=float)
    df = theta0.size
    half_nc = 0.5 * float(np.sum(theta0**2))
    x = 0.5 * epsilon**2
    if half_nc == 0.0:
        return float(log_gammainc_lower(0.5 * df, x))
    top = int(half_nc + 40.0 * math.sqrt(half_nc) + 60)
    j = np.arange(top + 1)
    log_pois = j * math.log(half_nc) - half_nc - sp.gammaln(j + 1.0)
    return float(sp.logsumexp(log_pois + log_gammainc_lower(0.5 * df + j, x)))


# ---------------------------------------------------------------- support-size and l1 tails


@dataclass(frozen=True)
class TailRow:
    p: int
    threshold: float
    log_prob: float
    log_ci_lo: float
    log_ci_hi: float
    draws: int
    upper_bound_only: bool = False


def _conditional_row(p, threshold, log_cond):
    """Summarize per-draw conditional log-probabilities: log of their mean, with a normal CI."""
    log_cond = np.asarray(log_cond, dtype=float)
    n = log_cond.size
    est = logmeanexp(log_cond)
    # SE of the mean on the natural scale, relative to the estimate
    rel = np.exp(log_cond - est)
    rel_se = float(np.std(rel, ddof=1) / math.sqrt(n))
    lo = est + math.log(max(1.0 - 1.96 * rel_se, 1e-300))
    hi = est + math.log(1.0 + 1.96 * rel_se)
    return TailRow(p, threshold, float(est), lo, hi, n)


def _direct_row(p, threshold, exceed):
    hits, n = int(np.count_nonzero(exceed)), exceed.size
    lo, hi = wilson_interval(hits, n)
    if hits == 0:
        return TailRow(p, threshold, _log(hi), -np.inf, _log(hi), n, True)
    return TailRow(p, threshold, _log(hits / n), _log(lo), _log(hi), n)


def _ps_scale_draws(spec, size, gen):
    """(log gamma_j + log |X_j|) for size draws of the shrinkage prior with tau factored out."""
    log_gamma = sample_ps(spec, gen, size).log_gamma
    return log_gamma + np.log(np.abs(gen.laplace(0.0, 1.0, size=log_gamma.shape)))


def _ps_scale_draws_tilted(spec, size, gen, k_top, strength=None):
    """Importance draws of log(gamma_j |X_j|) that favour a large k_top-th order statistic.

    The Dirichlet is generated as G_j / sum(G) with log G_j = log G'_j - w_j / e,
    G'_j ~ Gamma(e + 1), w_j ~ Exp(1), e = alpha / m. The sorted w follow the
    Renyi representation w_(l) = sum_{i <= l} Z_i / (m - i + 1). Since
    r_(k_top) scales like exp(-(w_(k_top) - w_(1)) / e) after normalization,
    the spacings Z_2, ..., Z_k_top are drawn from Exp(rate_i) with
    rate_i = 1 + strength m / (alpha (m - i + 1)); with strength = a_tau (the
    default) this cancels the inverse-gamma tail's power-law dependence on
    that gap. Returns the draws and the log importance weights.
    """
    m, conc = spec.m, spec.alpha / spec.m
    strength = spec.a_tau if strength is None else strength
    rates = np.ones(m)
    rates[1:k_top] += strength * m / (spec.alpha * (m - np.arange(1, k_top)))
    z = gen.standard_exponential((size, m)) / rates
    log_weight = np.sum(-z[:, 1:k_top] * (1.0 - rates[1:k_top]) - np.log(rates[1:k_top]), axis=1)
    w = np.cumsum(z / (m - np.arange(m)), axis=1)
    log_g = np.log(gen.standard_gamma(conc + 1.0, size=(size, m))) - w / conc
    log_gamma = log_g - sp.logsumexp(log_g, axis=1, keepdims=True)
    return log_gamma + np.log(np.abs(gen.laplace(0.0, 1.0, size=(size, m)))), log_weight


TILT_FRACTIONS = (0.25, 0.5, 0.75, 1.0)


def _supp_log_cond(spec, log_r, big_k, delta):
    log_rk = -np.partition(-log_r, big_k - 1, axis=1)[:, big_k - 1]
    if delta == 0.0:
        return np.zeros(log_rk.shape)  # every coordinate is nonzero almost surely
    return log_invgamma_sf(np.exp(math.log(delta) - log_rk), spec.a_tau, spec.b_tau)


def suppdim_tail_mc(p_grid, a_const, replicates, rng, epsilon=0.5, prior="ps", hyper=(), method="conditional", tilt=None):
    """log P(|supp_delta(theta)| > A log p) per p, with delta = epsilon / p.

    Under the shrinkage prior theta_j = tau * gamma_j * X_j with X_j ~ DE(1),
    so the count exceeds K - 1 (K = floor(A log p) + 1) exactly when
    tau > delta / r_(K), r_(K) the K-th largest gamma_j |X_j|. The default
    ``method="conditional"`` averages that inverse-gamma tail over
    importance draws of (gamma, X) (see _ps_scale_draws_tilted), with the
    tilt strength chosen on pilot draws unless ``tilt`` is given;
    ``method="plain"`` averages it over prior draws and ``method="direct"``
    counts exceedances of full prior draws.
    ``prior="laplace"`` gives the unshrunk contrast with iid DE(1) coordinates.
    """
    gen = as_generator(rng)
    rows = []
    for p in p_grid:
        p = int(p)
        threshold = a_const * math.log(p)
        delta = epsilon / p
        big_k = int(math.floor(threshold)) + 1
        if prior == "laplace" or method == "direct" or big_k > p:
            if prior == "laplace":
                theta = gen.laplace(0.0, 1.0, size=(replicates, p))
            else:
                theta = sample_ps(ShrinkagePriorSpec(p, **dict(hyper)), gen, replicates).theta
            count = np.sum(np.abs(theta) > delta, axis=1)
            rows.append(_direct_row(p, threshold, count > threshold))
            continue
        spec = ShrinkagePriorSpec(p, **dict(hyper))
        if method == "plain":
            log_r, log_weight = _ps_scale_draws(spec, replicates, gen), 0.0
            rows.append(_conditional_row(p, threshold, _supp_log_cond(spec, log_r, big_k, delta)))
            continue
        if tilt is None:
            # pick the tilt with the smallest relative SE on independent pilot draws
            pilot = max(replicates // 10, 100)
            scores = []
            for frac in TILT_FRACTIONS:
                log_r, log_weight = _ps_scale_draws_tilted(spec, pilot, gen, big_k, frac * spec.a_tau)
                row = _conditional_row(p, threshold, _supp_log_cond(spec, log_r, big_k, delta) + log_weight)
                scores.append(row.log_ci_hi - row.log_prob)
            strength = TILT_FRACTIONS[int(np.argmin(scores))] * spec.a_tau
        else:
            strength = tilt
        log_r, log_weight = _ps_scale_draws_tilted(spec, replicates, gen, big_k, strength)
        rows.append(_conditional_row(p, threshold, _supp_log_cond(spec, log_r, big_k, delta) + log_weight))
    return rows


def l1_tail_mc(p_grid, replicates, rng, threshold=None, hyper=(), method="conditional"):
    """log P(||theta||_1 >= t) per p under the shrinkage prior, t = (log p)^2 by default.

    ||theta||_1 = tau * W with W = sum_j gamma_j |X_j|, so the conditional
    estimator averages P(tau >= t / W) over draws of W.
    """
    gen = as_generator(rng)
    rows = []
    for p in p_grid:
        p = int(p)
        t = math.log(p) ** 2 if threshold is None else float(threshold)
        spec = ShrinkagePriorSpec(p, **dict(hyper))
        if t <= 0:
            rows.append(TailRow(p, t, 0.0, 0.0, 0.0, replicates))
            continue
        if method == "direct":
            theta = sample_ps(spec, gen, replicates).theta
            rows.append(_direct_row(p, t, np.sum(np.abs(theta), axis=1) >= t))
            continue
        log_w = sp.logsumexp(_ps_scale_draws(spec, replicates, gen), axis=1)
        rows.append(_conditional_row(p, t, log_invgamma_sf(np.exp(math.log(t) - log_w), spec.a_tau, spec.b_tau)))
    return rows


def l1_conditional_mean(tau, gamma, replicates, rng):
    """Monte Carlo E[||theta||_1 | tau, gamma] and its SE; the exact value is tau since sum(gamma) = 1."""
    gen = as_generator(rng)
    gamma = np.asarray(gamma, dtype=float)
    l1 = tau * np.abs(gen.laplace(0.0, 1.0, size=(replicates, gamma.size))) @ gamma
    return float(np.mean(l1)), float(np.std(l1, ddof=1) / math.sqrt(replicates))


def tail_slope(rows):
    """Least-squares slope of log-probability against log p and its t statistic."""
    x = np.log([r.p for r in rows])
    y = np.array([r.log_prob for r in rows])
    fit = stats.linregress(x, y)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.float64(fit.slope) / fit.stderr
    return float(fit.slope), float(t)


# ---------------------------------------------------------------- quadratic forms


@dataclass(frozen=True)
class QuadformRow:
    t: float
    prob: float
    ci_lo: float
    ci_hi: float
    bound: float  # 2 exp(-C min(n t^2 / (K^2 ||A||_F^2), n t / (K ||A||_2)))
    hits: int


def quadform_bound(t, n, fro, op, c_const=1.0, k_const=4.0):
    """Two-regime tail bound 2 exp(-C min(n t^2 / (K^2 F^2), n t / (K op)))."""
    if fro == 0:
        return 0.0
    expo = min(n * t * t / (k_const**2 * fro**2), n * t / (k_const * op))
    return min(1.0, 2.0 * math.exp(-c_const * expo))


def quadform_tail_mc(a, n, t_grid, replicates, rng, c_const=1.0, k_const=4.0):
    """P(|mean_i y_i' A y_i - tr A| >= t) for y_i ~ N(0, I), per t.

    With A = V diag(w) V' the average is sum_l w_l chi2_n / n, so each
    replicate costs one chi-square draw per eigenvalue. The default
    (C, K) = (1, 4) is the constant pair for which the bound is proven for
    Gaussian data.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or not np.allclose(a, a.T, atol=1e-12):
        raise ValueError("A must be symmetric")
    gen = as_generator(rng)
    w = np.linalg.eigvalsh(0.5 * (a + a.T))
    fro, op = float(np.sqrt(np.sum(w * w))), float(np.max(np.abs(w)))
    dev = np.zeros(replicates)
    nz = w != 0
    if np.any(nz):
        dev = gen.chisquare(n, size=(replicates, int(np.count_nonzero(nz)))) @ w[nz] / n - np.sum(w)
    rows = []
    for t in t_grid:
        hits = int(np.count_nonzero(np.abs(dev) >= t))
        lo, hi = wilson_interval(hits, replicates)
        rows.append(QuadformRow(float(t), hits / replicates, lo, hi, quadform_bound(t, n, fro, op, c_const, k_const), hits))
    return rows


def fit_quadform_constant(rows, n, fro, op, k_const=4.0):
    """Largest C such that the bound with that C stays above every empirical tail (zero-hit rows skipped)."""
    cs = []
    for r in rows:
        if r.hits == 0 or r.prob >= 1.0:
            continue
        expo = min(n * r.t**2 / (k_const**2 * fro**2), n * r.t / (k_const * op))
        cs.append(-math.log(r.prob / 2.0) / expo)
    return float(min(cs)) if cs else float("inf")


def chisquare_tail(p, n, t):
    """Exact P(|chi2_{np}/n - p| >= t), the A = I_p case."""
    df = n * p
    return float(stats.chi2.cdf((p - t) * n, df) + stats.chi2.sf((p + t) * n, df))


# ---------------------------------------------------------------- global-scale tails


def ftau_tail_quadrature(p_grid):
    """For tau ~ IG(log p, log p): log P(tau > log p), log P(2 log p <= tau <= 4 log p), log P(tau < 1/log p).

    b / tau ~ Gamma(a, 1), so each probability is a regularized incomplete
    gamma evaluation. Rows also carry the ratios -log P / log p.
    """
    rows = []
    for p in p_grid:
        if p < 3:
            raise ValueError("p must be >= 3")
        a = math.log(p)
        # tau > a  <=>  b / tau < 1
        log_tail = float(log_gammainc_lower(a, 1.0))
        # tau in [2a, 4a]  <=>  b / tau in [1/4, 1/2]
        log_interval = float(np.log(sp.gammainc(a, 0.5) - sp.gammainc(a, 0.25)))
        # tau < 1/a  <=>  b / tau > a^2
        log_small = float(np.log(sp.gammaincc(a, a * a)))
        rows.append({
            "p": int(p), "log_tail": log_tail, "log_interval": log_interval, "log_small": log_small,
            "tail_rate": -log_tail / a, "interval_rate": -log_interval / a, "small_rate": -log_small / a,
            "mass_check": float(sp.gammainc(a, 1.0) + sp.gammaincc(a, 1.0)),
        })
    return rows


# ---------------------------------------------------------------- double-exponential small ball


def de_smallball_bound(psi_bounds, s, delta, eta0):
    """exp{-s log 2 - sum|eta0_j| / a} (1 - exp(-delta / (b sqrt s)))^s for scales in [a, b]."""
    a, b = psi_bounds
    if not 0 < a <= b:
        raise ValueError("need 0 < a <= b")
    eta0 = np.asarray(eta0, dtype=float)
    if eta0.size != s:
        raise ValueError("eta0 must have length s")
    log_bound = -s * math.log(2.0) - float(np.sum(np.abs(eta0))) / a + s * math.log(-math.expm1(-delta / (b * math.sqrt(s))))
    return math.exp(log_bound)


@dataclass(frozen=True)
class BoundCheck:
    estimate: float
    se: float
    ci_lo: float
    ci_hi: float
    bound: float

    @property
    def holds(self):
        """The bound does not exceed the estimate by more than 3 SE (Wilson, z = 3)."""
        return self.bound <= self.ci_hi


def de_smallball_bound_check(psi_bounds, s, delta, eta0, replicates, rng, psi=None):
    """MC estimate of P(||eta - eta0|| < delta), eta_j ~ DE(psi_j), against the lower bound.

    ``psi`` defaults to scales spread evenly over ``psi_bounds``.
    """
    gen = as_generator(rng)
    a, b = psi_bounds
    psi = np.linspace(a, b, s) if psi is None else np.asarray(psi, dtype=float)
    if psi.size != s or np.any(psi < a) or np.any(psi > b):
        raise ValueError("psi must have length s with entries in [a, b]")
    eta0 = np.asarray(eta0, dtype=float)
    bound = de_smallball_bound(psi_bounds, s, delta, eta0)
    hits = 0
    done = 0
    while done < replicates:
        m = min(100_000, replicates - done)
        eta = gen.laplace(0.0, psi, size=(m, s))
        hits += int(np.count_nonzero(np.sum((eta - eta0) ** 2, axis=1) < delta**2))
        done += m
    est = hits / replicates
    lo, hi = wilson_interval(hits, replicates, z=Z3)
    return BoundCheck(est, math.sqrt(est * (1 - est) / replicates), lo, hi, bound)


# ---------------------------------------------------------------- Frobenius prior concentration


@dataclass(frozen=True)
class FrobConcSpec:
    """Dense N(0,1) loadings prior around truth loadings; kappa2 >= ||L0||_2 and kappa2 > 1.

    The residual variance is held at its true value, so only the loadings vary.
    """

    loadings0: np.ndarray
    kappa2: float

    def __post_init__(self):
        lam = np.asarray(self.loadings0, dtype=float)
        if lam.ndim == 1:
            lam = lam[:, None]
        if lam.ndim != 2:
            raise ValueError("loadings0 must be p x k")
        if lam.size > 12:
            raise ValueError("p k must be <= 12 for the probability to be estimable by direct MC")
        if not self.kappa2 > 1.0 or self.kappa2 < np.linalg.norm(lam, 2):
            raise ValueError("need kappa2 > 1 and kappa2 >= ||L0||_2")
        object.__setattr__(self, "loadings0", lam)

    @property
    def dim(self):
        return self.loadings0.size


def frob_conc_bound(spec, epsilon):
    """min(1, exp{-kappa2^2 - d + d log(epsilon / (2 kappa2))}), d the number of free loadings."""
    d = spec.dim
    # the formula passes 1 once epsilon is large; a probability bound can be clipped there
    return min(1.0, math.exp(-spec.kappa2**2 - d + d * math.log(epsilon / (2.0 * spec.kappa2))))


def frob_prior_conc_check(spec, epsilon, replicates, rng):
    """MC estimate of P(||L L' - L0 L0'||_F < epsilon) against the lower bound.

    ||L L' - L0 L0'||_F^2 = ||L'L||_F^2 - 2 ||L0'L||_F^2 + ||L0'L0||_F^2 is
    evaluated through k x k Gram matrices.
    """
    if not 0 < epsilon:
        raise ValueError("epsilon must be > 0")
    gen = as_generator(rng)
    lam0 = spec.loadings0
    p, k = lam0.shape
    g00 = float(np.sum((lam0.T @ lam0) ** 2))
    hits = done = 0
    while done < replicates:
        m = min(200_000, replicates - done)
        lam = gen.standard_normal((m, p, k))
        gll = np.einsum("bpi,bpj->bij", lam, lam)
        g0l = np.einsum("pi,bpj->bij", lam0, lam)
        frob2 = np.sum(gll**2, axis=(1, 2)) - 2.0 * np.sum(g0l**2, axis=(1, 2)) + g00
        hits += int(np.count_nonzero(frob2 < epsilon**2))
        done += m
    est = hits / replicates
    lo, hi = wilson_interval(hits, replicates, z=Z3)
    return BoundCheck(est, math.sqrt(est * (1 - est) / replicates), lo, hi, frob_conc_bound(spec, epsilon))


# ---------------------------------------------------------------- Euler function


def euler_g(x):
    """g(x) = log(1 / (x Gamma(x))) / x = -log Gamma(1 + x) / x on (0, 1/2].

    Evaluated from the series log Gamma(1 + x) = -gamma x + sum_{k>=2} (-1)^k zeta(k) x^k / k,
    which avoids the cancellation in log x + log Gamma(x) as x -> 0.
    """
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)) or np.any(x > 0.5):
        raise ValueError("euler_g needs 0 < x <= 1/2")
    k = np.arange(2, 80, dtype=float)
    coef = (-1.0) ** k * sp.zeta(k) / k
    out = EULER_GAMMA - np.sum(coef * x[..., None] ** (k - 1), axis=-1)
    return out if out.ndim else float(out)


def conclab_row(lemma, p, s, eps_or_t, estimate, ci_lo, ci_hi, bound, seed):
    return {
        "lemma": lemma, "p": p, "s": s, "epsilon_or_t": eps_or_t, "estimate": estimate,
        "ci_lo": ci_lo, "ci_hi": ci_hi, "bound": bound, "seed": seed,
    }

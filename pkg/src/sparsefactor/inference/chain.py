"""Chain driver, loss streaming, posterior summaries and an importance-sampling oracle."""
from dataclasses import dataclass, field

import numpy as np
from scipy import special as sp

from ..distributions import RngHandle, as_generator
from ..matlin import LowRankPlusScalar, lowrank_frob_diff, lowrank_opnorm_diff
from .samplers import gibbs_step, initial_state, sample_prior_batch


@dataclass(frozen=True)
class SamplerConfig:
    """Chain settings. Every conditional is sampled exactly or by an
    independence proposal, so there are no step sizes to tune or adapt."""

    regime: str
    iterations: int = 4000
    burnin: int = 1000
    thin: int = 1
    seed: int = 0
    init: str = "pca"
    store_loadings: bool = False

    def __post_init__(self):
        if not (self.iterations > self.burnin >= 0):
            raise ValueError("need iterations > burnin >= 0")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if (self.iterations - self.burnin) % self.thin:
            raise ValueError("iterations - burnin must be a multiple of thin")

    @property
    def n_stored(self):
        return (self.iterations - self.burnin) // self.thin


@dataclass
class PosteriorChain:
    regime: str
    iterations: int
    burnin: int
    thin: int
    seed: int
    sigma2: np.ndarray
    op_loss: np.ndarray | None = None
    frob_loss: np.ndarray | None = None
    loadings: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return self.sigma2.size


def run_chain(config, data, prior, truth=None, rng=None):
    """Run burn-in plus sampling sweeps.

    With ``truth`` (a LowRankPlusScalar or FactorModelParams) the operator
    and Frobenius losses against it are streamed per stored draw; no p x p
    matrix is formed.
    """
    if prior.regime != config.regime:
        raise ValueError(f"config regime {config.regime!r} does not match prior {prior.regime!r}")
    data = np.asarray(data, dtype=float)
    gen = as_generator(rng if rng is not None else RngHandle(config.seed))
    if truth is not None and not isinstance(truth, LowRankPlusScalar):
        truth = LowRankPlusScalar(truth.loadings, truth.sigma2)
    state = initial_state(prior, data, gen, config.init)
    n_keep = config.n_stored
    sigma2 = np.empty(n_keep)
    op = np.empty(n_keep) if truth is not None else None
    frob = np.empty(n_keep) if truth is not None else None
    lams = np.empty((n_keep,) + state.loadings.shape) if config.store_loadings else None
    idx = 0
    for it in range(config.iterations):
        gibbs_step(state, data, prior, gen)
        if it < config.burnin or (it - config.burnin) % config.thin:
            continue
        sigma2[idx] = state.sigma2
        if truth is not None:
            draw = LowRankPlusScalar(state.loadings, state.sigma2)
            op[idx] = lowrank_opnorm_diff(draw, truth)
            frob[idx] = lowrank_frob_diff(draw, truth)
        if lams is not None:
            lams[idx] = state.loadings
        idx += 1
    diag = dict(state.stats)
    if diag.get("gamma_proposed"):
        diag["gamma_acceptance"] = diag["gamma_accepted"] / diag["gamma_proposed"]
    return PosteriorChain(
        config.regime, config.iterations, config.burnin, config.thin, config.seed,
        sigma2, op, frob, lams, diag,
    )


@dataclass(frozen=True)
class LossSummary:
    mean: float
    median: float
    q05: float
    q95: float
    exceedance: tuple  # ((radius, fraction of draws with loss > radius), ...)


def _summarize(losses, radii):
    losses = np.asarray(losses, dtype=float)
    q05, med, q95 = np.quantile(losses, [0.05, 0.5, 0.95])
    exc = tuple((float(r), float(np.mean(losses > r))) for r in radii)
    return LossSummary(float(np.mean(losses)), float(med), float(q05), float(q95), exc)


def posterior_loss_summary(chain, radii=()):
    """Summaries of the operator and Frobenius loss streams, with exceedance fractions per radius."""
    if chain.op_loss is None or len(chain) == 0:
        raise ValueError("chain carries no loss stream")
    return {
        "operator": _summarize(chain.op_loss, radii),
        "frobenius": _summarize(chain.frob_loss, radii),
    }


def batch_means_se(x, n_batches=50):
    """Standard error of a chain average by non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    size = x.size // n_batches
    if size < 1:
        raise ValueError("chain too short for batch means")
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(np.std(means, ddof=1) / np.sqrt(n_batches))


def marginal_loglik(loadings, sigma2, data):
    """log N(data rows; 0, L L' + s2 I) for a batch of (L, s2), via the k x k capacitance matrix.

    ``loadings`` is (B, p, k), ``sigma2`` is (B,).
    """
    n, p = data.shape
    lam = np.asarray(loadings, dtype=float)
    s2 = np.asarray(sigma2, dtype=float)
    k = lam.shape[2]
    scatter = data.T @ data
    cap = np.eye(k)[None] + np.einsum("bpi,bpj->bij", lam, lam) / s2[:, None, None]
    sign, logdet_cap = np.linalg.slogdet(cap)
    logdet = p * np.log(s2) + logdet_cap
    # tr(S^{-1} Y'Y) via Woodbury
    proj = np.einsum("bpi,pq,bqj->bij", lam, scatter, lam)
    quad = np.trace(scatter) / s2 - np.einsum(
        "bij,bji->b", np.linalg.solve(cap, np.eye(k)[None]), proj
    ) / s2**2
    return -0.5 * (n * p * np.log(2 * np.pi) + n * logdet + quad)


def importance_oracle(prior, data, fn, n_particles, rng, batch=20000):
    """Self-normalized importance estimate of E[fn(L, s2) | data] with prior particles.

    Returns (estimate, standard error, effective sample size).
    """
    gen = as_generator(rng)
    logw, vals = [], []
    done = 0
    while done < n_particles:
        b = min(batch, n_particles - done)
        lam, s2 = sample_prior_batch(prior, b, gen)
        logw.append(marginal_loglik(lam, s2, data))
        vals.append(fn(lam, s2))
        done += b
    logw = np.concatenate(logw)
    vals = np.concatenate(vals)
    w = np.exp(logw - sp.logsumexp(logw))
    est = float(np.sum(w * vals))
    se = float(np.sqrt(np.sum(w * w * (vals - est) ** 2)))
    ess = float(1.0 / np.sum(w * w))
    return est, se, ess

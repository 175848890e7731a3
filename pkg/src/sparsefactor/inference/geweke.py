"""Joint-distribution test of sampler correctness (marginal- vs successive-conditional)."""
from dataclasses import dataclass

import numpy as np

from ..distributions import as_generator
from .chain import batch_means_se
from .samplers import gibbs_step, sample_prior_state

STAT_NAMES = (
    "log1p_frob2", "log_sigma2", "log1p_l1", "latent", "log_mean_y2",
    "asinh_y12", "asinh_lambda11", "asinh_sigma12",
)


def _latent(prior, state):
    if prior.regime == "ps":
        return np.log(state.tau)
    if prior.regime == "pl1":
        return state.pi
    return np.log1p(state.loadings[0, 0] ** 2)


def geweke_statistics(prior, state, data):
    lam = state.loadings
    return np.array([
        np.log1p(np.sum(lam * lam)),
        np.log(state.sigma2),
        np.log1p(np.sum(np.abs(lam))),
        _latent(prior, state),
        np.log(np.mean(data * data)),
        np.arcsinh(np.mean(data[:, 0] * data[:, 1])),
        np.arcsinh(lam[0, 0]),
        np.arcsinh(lam[0] @ lam[1]),
    ])


def _simulate_data(state, gen):
    n = state.factors.shape[0]
    p = state.loadings.shape[0]
    return state.factors @ state.loadings.T + np.sqrt(state.sigma2) * gen.standard_normal((n, p))


@dataclass(frozen=True)
class GewekeResult:
    names: tuple
    z: np.ndarray
    marginal_mean: np.ndarray
    successive_mean: np.ndarray

    @property
    def max_abs_z(self):
        return float(np.max(np.abs(self.z)))


def geweke_joint_test(prior, n, iterations, rng, step=gibbs_step, n_batches=50):
    """z-scores comparing prior-predictive draws with a data-resimulating Gibbs chain.

    ``step(state, data, prior, gen)`` is the sampler under test; the
    successive-conditional chain alternates data | parameters and one sweep.
    Small problems only (p <= 10, k <= 2, n <= 20 keeps it fast).
    """
    if prior.p < 2 or n < 1:
        raise ValueError("need p >= 2 and n >= 1")
    gen = as_generator(rng)
    marg = np.empty((iterations, len(STAT_NAMES)))
    for i in range(iterations):
        st = sample_prior_state(prior, n, gen)
        marg[i] = geweke_statistics(prior, st, _simulate_data(st, gen))
    succ = np.empty_like(marg)
    state = sample_prior_state(prior, n, gen)
    for i in range(iterations):
        data = _simulate_data(state, gen)
        state = step(state, data, prior, gen)
        succ[i] = geweke_statistics(prior, state, data)
    m_mean, s_mean = marg.mean(axis=0), succ.mean(axis=0)
    se2 = marg.var(axis=0, ddof=1) / iterations
    se2 += np.array([batch_means_se(succ[:, j], n_batches) ** 2 for j in range(marg.shape[1])])
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (m_mean - s_mean) / np.sqrt(se2)
    z = np.where(np.isnan(z), 0.0, z)
    return GewekeResult(STAT_NAMES, z, m_mean, s_mean)

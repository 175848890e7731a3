"""Posterior samplers, chain handling and sampler diagnostics."""
from .chain import (
    LossSummary,
    PosteriorChain,
    SamplerConfig,
    batch_means_se,
    importance_oracle,
    marginal_loglik,
    posterior_loss_summary,
    run_chain,
)
from .geweke import GewekeResult, geweke_joint_test, geweke_statistics
from .samplers import (
    REGIMES,
    FactorPrior,
    GibbsState,
    gibbs_step,
    gibbs_step_p0,
    gibbs_step_pl1,
    gibbs_step_ps,
    initial_state,
    sample_prior_batch,
    sample_prior_state,
)

"""Economic capital for the one-factor default/recovery portfolio model.

Library layout: ``model`` holds the parameter types and closed-form
conditional quantities, ``simulate`` the Monte Carlo engines, ``likelihood``
the augmented/marginal/approximate likelihoods, ``mle`` the two-stage point
estimator, ``mcmc`` the Metropolis-Hastings posterior sampler, ``capital``
the uncertainty-aware capital estimators, and ``cli``/``dataio`` the batch
command-line surface and file formats.
"""

from .capital import (
    CapitalReport,
    StressedCapital,
    full_predictive_quantile,
    predictive_losses,
    quantile_distribution,
    quantile_distribution_finite,
    quantile_given_params,
    stressed_summaries,
)
from .likelihood import (
    AugmentedState,
    YearlyObservations,
    log_joint_density_period,
    log_likelihood_augmented,
    log_likelihood_default_approx,
    log_likelihood_marginal,
    log_likelihood_recovery_approx,
)
from .mcmc import (
    ChainConfig,
    PosteriorSamples,
    PosteriorSummary,
    PriorSpec,
    log_posterior,
    run_chain,
    summarize,
    tune_proposals,
)
from .mle import (
    MleFit,
    backout_latent,
    fit_default_closed_form,
    fit_mle,
    fit_recovery_feasible,
    mle_capital_report,
)
from .model import (
    LatentPath,
    ModelParams,
    Portfolio,
    analytic_limit_quantile,
    apply_recovery_link,
    conditional_default_prob,
    conditional_loss_rate,
    limiting_loss,
)
from .simulate import (
    LossSample,
    SyntheticDataset,
    empirical_quantile,
    simulate_dataset,
    simulate_losses,
)

__version__ = "0.1.0"

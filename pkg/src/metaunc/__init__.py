"""Meta-uncertainty for Bayesian model comparison.

Simulate model-implied posterior model probabilities (PMPs), fit Bayesian
meta-models on the probability simplex, and combine them into a predictive
mixture that forecasts PMPs on new data.
"""

__version__ = "0.1.0"

from .simplex import (DegenerateWeightsError, DirichletParams, LogisticNormalParams, PmpVector,
                      SimplexDensityGrid, alr, alr_inv, barycentric_grid, clamp_to_interior,
                      dirichlet_logpdf, dirichlet_mean, logistic_normal_logpdf, normalize_from_log)
from .models import (BetaBernoulliModel, Dataset, EpidemicModel, ExternalPmpSource,
                     NigRegressionModel, beta_bernoulli_log_marginal, epidemic_integrate,
                     epidemic_log_marginal, load_external_pmps, nig_log_marginal,
                     nig_posterior_update)
from .engine import (LabeledPmpSample, ModelSet, compute_pmps, group_by_true_model,
                     mean_max_pmp, run_level2)
from .meta import (Embedding, MetaModelConfig, MetaPosterior, cluster_embedding, fit,
                   log_posterior, mean_embedding, posterior_predictive_logpdf)
from .mixture import (PredictiveMixture, build_mixture, density_grid, mixture_logpdf,
                      mixture_mean, mixture_variance_trace)

__all__ = [
    "BetaBernoulliModel", "Dataset", "DegenerateWeightsError", "DirichletParams", "Embedding",
    "EpidemicModel", "ExternalPmpSource", "LabeledPmpSample", "LogisticNormalParams",
    "MetaModelConfig", "MetaPosterior", "ModelSet", "NigRegressionModel", "PmpVector",
    "PredictiveMixture", "SimplexDensityGrid", "alr", "alr_inv", "barycentric_grid",
    "beta_bernoulli_log_marginal", "build_mixture", "clamp_to_interior", "cluster_embedding",
    "compute_pmps", "density_grid", "dirichlet_logpdf", "dirichlet_mean", "epidemic_integrate",
    "epidemic_log_marginal", "fit", "group_by_true_model", "load_external_pmps", "log_posterior",
    "logistic_normal_logpdf", "mean_embedding", "mean_max_pmp", "mixture_logpdf", "mixture_mean",
    "mixture_variance_trace", "nig_log_marginal", "nig_posterior_update", "normalize_from_log",
    "posterior_predictive_logpdf", "run_level2",
]

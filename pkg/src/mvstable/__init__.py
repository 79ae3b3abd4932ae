"""Bayesian inference for multivariate alpha-stable distributions.

Densities are evaluated through one-dimensional projections of the spectral
measure; the measure itself is estimated under a discrete or a normal
approximation, with MCMC samplers for the full posterior.
"""

from ._jit import NUMBA_ENABLED
from .core import (ChainDivergedError, DegenerateDirectionError, DomainError,
                   MLFitError, QuadratureError, StableModelParams,
                   UnivariateStableParams, UnsupportedBranchError, cf_exponent,
                   cf_value, psi_alpha, simulate_mvstable, simulate_univariate,
                   univariate_density_fft, univariate_ml_fit)
from .gfun import (ProjectionInput, QuadConfig, conditional_density,
                   find_cosine_roots, g_alpha_d, g_values, marginal_density_mc)
from .mcmc import (ChainState, ProposalConfig, Trace, ar_mh_step,
                   geweke_diagnostic, log_marginal_likelihood,
                   log_posterior_discrete, log_posterior_normal,
                   projection_ml_summary, propose_latent_gn)
from .pipeline import (ReturnSeries, garch_filter, ingest_csv, median_scale)
from .samplers import run_mcmc_discrete, run_mcmc_normal
from .spectral import (CFSystem, DiscreteMeasure, NormalMeasureApprox,
                       ProjectionFunctions, beta_from_cf, build_cf_system,
                       build_scale_system, draw_gamma_truncated,
                       measure_from_json, measure_to_json,
                       sigma_beta_discrete, sigma_beta_normal, solve_gamma)
from .sphere import (SphereGrid, gaussian_normalized_grid, hit_and_run_sphere,
                     uniform_sphere)

__version__ = "0.1.0"

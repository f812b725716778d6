//! Likelihood, maximum-likelihood seeding and single-experiment MCMC.

pub mod cmaes;
mod fit;
mod likelihood;
mod mcmc;

pub use cmaes::{minimize_unit_box, minimize_unit_box_batch, CmaesResult, CmaesSettings};
pub use fit::{mle_fit, mle_fit_with, FitResult, OptimizerSettings};
pub use likelihood::{
    gaussian_log_likelihood, log_likelihood, prior_contains, Bounds, ExperimentLikelihood,
    LogLikelihood, SIGMA_PRIOR_FRACTION,
};
pub use mcmc::{
    adaptive_mh_step, initial_covariance, run_single_chain, run_single_chain_with,
    AdaptationSettings, ChainRun, ChainState, FlatPrior, LogPrior, McmcSettings, StepOutcome,
};

pub(crate) use mcmc::{chain_start, to_model_params};

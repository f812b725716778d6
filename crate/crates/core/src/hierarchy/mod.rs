//! Normal-Inverse-Wishart hierarchy over several experiments.

mod gibbs;
mod niw;
mod predictive;

pub use gibbs::{
    gibbs_sweep, run_hierarchical, run_hierarchical_with, GaussianPrior, GibbsSampler,
    HierRunResult, HierarchicalSettings,
};
pub use niw::{niw_posterior, sample_inverse_wishart, sample_niw, HyperSample, NIWParams};
pub use predictive::{
    pairwise_mu_table, pearson, posterior_predictive_density, predictive_grid, PairwiseCorrelation,
};

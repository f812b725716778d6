//! Large-amplitude AC cyclic voltammetry: forward simulation of a one-electron
//! quasi-reversible reaction at a planar electrode, maximum-likelihood and
//! adaptive Metropolis-Hastings recovery of `(E0, k0, alpha, Cdl, Ru)`, and a
//! Normal-Inverse-Wishart hierarchy pooling repeated experiments.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: experiment configuration, parameter types and the applied
//!   potential waveform.
//! - [`solver`]: nondimensionalisation and the implicit finite-difference
//!   diffusion solver with Butler-Volmer, ohmic-drop and double-layer coupling.
//! - [`data`]: current traces, CSV IO, block decimation, synthetic datasets and
//!   sample summaries.
//! - [`inference`]: likelihood, CMA-ES maximum-likelihood seeding and the
//!   adaptive Metropolis-Hastings chain.
//! - [`hierarchy`]: NIW hyperprior, Metropolis-within-Gibbs over several
//!   experiments and posterior-predictive summaries.

pub mod data;
pub mod error;
pub mod hierarchy;
pub mod inference;
pub mod model;
pub mod solver;

pub use error::{Error, Result};
pub use model::{ExperimentConfig, ModelParams, PhysicalConstants, PriorHypercube, RunConfig};

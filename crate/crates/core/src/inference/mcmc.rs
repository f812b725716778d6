use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::fit::{mle_fit_with, FitResult, OptimizerSettings};
use super::likelihood::{Bounds, ExperimentLikelihood, LogLikelihood};
use crate::data::CurrentTrace;
use crate::error::{Error, Result};
use crate::model::{ExperimentConfig, ModelParams, PriorHypercube, N_PHYSICAL};
use crate::solver::{dimensionalise, DimensionlessParams, GridSettings, Scales};

/// Constants of the adaptive covariance rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationSettings {
    /// Steps taken with the initial proposal before adapting.
    pub start_after: usize,
    /// Learning rate is `(s + 1)^-decay` at the s-th adaptation.
    pub decay: f64,
    pub target_acceptance: f64,
    /// Initial proposal SD as a fraction of each support width.
    pub initial_sd_fraction: f64,
}

impl Default for AdaptationSettings {
    fn default() -> Self {
        Self {
            start_after: 100,
            decay: 0.6,
            target_acceptance: 0.25,
            initial_sd_fraction: 1e-4,
        }
    }
}

/// Log prior density inside the support, up to a constant. May return
/// `-inf` to reject a point.
pub trait LogPrior: Sync {
    fn log_prior(&self, x: &[f64]) -> f64;
}

/// Uniform prior over the support.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlatPrior;

impl LogPrior for FlatPrior {
    fn log_prior(&self, _x: &[f64]) -> f64 {
        0.0
    }
}

/// Diagonal initial covariance `(fraction * width)^2`.
pub fn initial_covariance(bounds: &Bounds, fraction: f64) -> DMatrix<f64> {
    let d = DVector::from_iterator(
        bounds.lower.len(),
        bounds.widths().into_iter().map(|w| (fraction * w).powi(2)),
    );
    DMatrix::from_diagonal(&d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Accepted,
    Rejected,
    OutOfBounds,
    SolverFailure,
}

/// One adaptive random-walk Metropolis-Hastings chain.
#[derive(Debug, Clone)]
pub struct ChainState {
    rng: ChaCha8Rng,
    pub seed: u64,
    pub stream: u64,
    pub bounds: Bounds,
    pub adaptation: AdaptationSettings,
    pub current: Vec<f64>,
    pub current_log_likelihood: f64,
    pub current_log_prior: f64,
    /// State after every step, burn-in included.
    pub samples: Vec<Vec<f64>>,
    pub log_posteriors: Vec<f64>,
    pub proposal_cov: DMatrix<f64>,
    pub running_mean: DVector<f64>,
    pub log_scale: f64,
    pub accepted_count: usize,
    pub proposed_count: usize,
    pub solver_failures: usize,
    adaptations: usize,
    chol: DMatrix<f64>,
}

impl ChainState {
    /// Starts a chain at `x0`, which must lie in `bounds` and have a finite
    /// posterior density.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x0: Vec<f64>,
        bounds: Bounds,
        initial_cov: DMatrix<f64>,
        adaptation: AdaptationSettings,
        likelihood: &dyn LogLikelihood,
        prior: &dyn LogPrior,
        seed: u64,
        stream: u64,
    ) -> Result<Self> {
        let d = x0.len();
        if d != likelihood.dimension() || initial_cov.shape() != (d, d) {
            return Err(Error::Domain("chain dimension mismatch".into()));
        }
        if !bounds.contains(&x0) {
            return Err(Error::Domain(format!(
                "chain start {x0:?} outside the support"
            )));
        }
        let log_lik = likelihood.log_likelihood(&x0)?;
        let log_prior = prior.log_prior(&x0);
        if !(log_lik + log_prior).is_finite() {
            return Err(Error::Numerical(
                "chain start has zero posterior density".into(),
            ));
        }
        let chol = cholesky_factor(&initial_cov).ok_or_else(|| {
            Error::Numerical("initial proposal covariance is not positive definite".into())
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Ok(Self {
            rng,
            seed,
            stream,
            bounds,
            adaptation,
            running_mean: DVector::from_column_slice(&x0),
            current: x0,
            current_log_likelihood: log_lik,
            current_log_prior: log_prior,
            samples: Vec::new(),
            log_posteriors: Vec::new(),
            proposal_cov: initial_cov,
            log_scale: 0.0,
            accepted_count: 0,
            proposed_count: 0,
            solver_failures: 0,
            adaptations: 0,
            chol,
        })
    }

    pub fn dimension(&self) -> usize {
        self.current.len()
    }

    pub fn current_log_posterior(&self) -> f64 {
        self.current_log_likelihood + self.current_log_prior
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed_count == 0 {
            0.0
        } else {
            self.accepted_count as f64 / self.proposed_count as f64
        }
    }

    /// Re-evaluates the prior at the current point, for priors that change
    /// between steps.
    pub fn refresh_prior(&mut self, prior: &dyn LogPrior) {
        self.current_log_prior = prior.log_prior(&self.current);
    }

    /// Samples after the first `burn_in` steps.
    pub fn retained(&self, burn_in: usize) -> &[Vec<f64>] {
        &self.samples[burn_in.min(self.samples.len())..]
    }

    pub fn retained_log_posteriors(&self, burn_in: usize) -> &[f64] {
        &self.log_posteriors[burn_in.min(self.log_posteriors.len())..]
    }

    fn adapt(&mut self, accepted: bool) {
        let a = &self.adaptation;
        if self.proposed_count <= a.start_after {
            return;
        }
        self.adaptations += 1;
        let eta = ((self.adaptations + 1) as f64).powf(-a.decay);
        let x = DVector::from_column_slice(&self.current);
        self.running_mean = &self.running_mean * (1.0 - eta) + &x * eta;
        let dx = &x - &self.running_mean;
        let updated = &self.proposal_cov * (1.0 - eta) + (&dx * dx.transpose()) * eta;
        let updated = (&updated + updated.transpose()) * 0.5;
        // keep the previous factor if round-off ever breaks definiteness
        if let Some(chol) = cholesky_factor(&updated) {
            self.proposal_cov = updated;
            self.chol = chol;
        }
        let hit = if accepted { 1.0 } else { 0.0 };
        self.log_scale += eta * (hit - a.target_acceptance);
    }
}

fn cholesky_factor(cov: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    Cholesky::new(cov.clone()).map(|c| c.l())
}

/// Proposes from `N(current, exp(log_scale) * proposal_cov)`, applies the
/// Metropolis rule and then adapts the proposal. Proposals outside the
/// support and failed model evaluations are rejected.
pub fn adaptive_mh_step(
    chain: &mut ChainState,
    likelihood: &dyn LogLikelihood,
    prior: &dyn LogPrior,
) -> StepOutcome {
    let d = chain.dimension();
    // draw both variates every step so the stream position does not depend
    // on the outcome
    let z = DVector::from_fn(d, |_, _| chain.rng.sample::<f64, _>(StandardNormal));
    let u: f64 = chain.rng.random();
    let step = &chain.chol * z * (0.5 * chain.log_scale).exp();
    let candidate: Vec<f64> = chain
        .current
        .iter()
        .zip(step.iter())
        .map(|(x, s)| x + s)
        .collect();
    chain.proposed_count += 1;

    let outcome = if !chain.bounds.contains(&candidate) {
        StepOutcome::OutOfBounds
    } else {
        let log_prior = prior.log_prior(&candidate);
        if log_prior == f64::NEG_INFINITY {
            StepOutcome::Rejected
        } else {
            match likelihood.log_likelihood(&candidate) {
                Ok(log_lik) if log_lik.is_finite() => {
                    let delta = log_lik + log_prior - chain.current_log_posterior();
                    if u.ln() < delta {
                        chain.current = candidate;
                        chain.current_log_likelihood = log_lik;
                        chain.current_log_prior = log_prior;
                        chain.accepted_count += 1;
                        StepOutcome::Accepted
                    } else {
                        StepOutcome::Rejected
                    }
                }
                Ok(_) => StepOutcome::Rejected,
                Err(e) => {
                    log::warn!("chain {}: candidate rejected: {e}", chain.stream);
                    chain.solver_failures += 1;
                    StepOutcome::SolverFailure
                }
            }
        }
    };

    chain.samples.push(chain.current.clone());
    chain.log_posteriors.push(chain.current_log_posterior());
    chain.adapt(outcome == StepOutcome::Accepted);
    outcome
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcSettings {
    /// Total chain length, burn-in included.
    pub n_samples: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub adaptation: AdaptationSettings,
    pub optimizer: OptimizerSettings,
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            burn_in: 5_000,
            seed: 0,
            adaptation: AdaptationSettings::default(),
            optimizer: OptimizerSettings::default(),
        }
    }
}

impl McmcSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples <= self.burn_in {
            return Err(Error::Domain(format!(
                "samples ({}) must exceed burn-in ({}); nothing would be retained",
                self.n_samples, self.burn_in
            )));
        }
        Ok(())
    }
}

/// A finished single-experiment chain.
#[derive(Debug, Clone)]
pub struct ChainRun {
    pub fit: FitResult,
    pub chain: ChainState,
    pub scales: Scales,
    pub burn_in: usize,
    /// Amperes-based offset for reporting log posteriors.
    pub log_likelihood_offset: f64,
}

impl ChainRun {
    /// Retained samples in physical units (`sigma` in amperes).
    pub fn retained_dimensional(&self) -> Vec<ModelParams> {
        self.chain
            .retained(self.burn_in)
            .iter()
            .map(|x| to_model_params(x, &self.scales))
            .collect()
    }

    /// Retained log posteriors with currents in amperes.
    pub fn retained_log_posteriors(&self) -> Vec<f64> {
        self.chain
            .retained_log_posteriors(self.burn_in)
            .iter()
            .map(|v| v + self.log_likelihood_offset)
            .collect()
    }
}

pub(crate) fn to_model_params(x: &[f64], scales: &Scales) -> ModelParams {
    dimensionalise(
        &DimensionlessParams::from_physical(&x[..N_PHYSICAL], x[N_PHYSICAL]),
        scales,
    )
}

/// Start of a chain at a fitted point: the estimate with its RMS residual,
/// pulled inside the noise-SD support if needed.
pub(crate) fn chain_start(fit: &FitResult, bounds: &Bounds) -> Vec<f64> {
    let mut x = fit.dimensionless_vector();
    for (k, v) in x.iter_mut().enumerate() {
        *v = v.clamp(bounds.lower[k], bounds.upper[k]);
    }
    if x[N_PHYSICAL] <= 0.0 {
        x[N_PHYSICAL] = 1e-6 * bounds.upper[N_PHYSICAL];
    }
    x
}

/// Fits `y` by maximum likelihood, then runs an adaptive chain from the fit
/// with a flat prior over the hypercube and the noise-SD range.
pub fn run_single_chain(
    y: &CurrentTrace,
    config: &ExperimentConfig,
    grid: &GridSettings,
    hypercube: &PriorHypercube,
    settings: &McmcSettings,
) -> Result<ChainRun> {
    settings.validate()?;
    let lik = ExperimentLikelihood::new(y, config, grid)?;
    run_single_chain_with(&lik, hypercube, settings, 0)
}

/// As [`run_single_chain`] for a prepared likelihood; `stream` selects the
/// chain's random stream under the shared seed.
pub fn run_single_chain_with(
    lik: &ExperimentLikelihood,
    hypercube: &PriorHypercube,
    settings: &McmcSettings,
    stream: u64,
) -> Result<ChainRun> {
    settings.validate()?;
    let fit = mle_fit_with(lik, hypercube, &settings.optimizer)?;
    let bounds = lik.support(hypercube);
    let x0 = chain_start(&fit, &bounds);
    let cov = initial_covariance(&bounds, settings.adaptation.initial_sd_fraction);
    let mut chain = ChainState::new(
        x0,
        bounds,
        cov,
        settings.adaptation.clone(),
        lik,
        &FlatPrior,
        settings.seed,
        stream,
    )?;
    for _ in 0..settings.n_samples {
        adaptive_mh_step(&mut chain, lik, &FlatPrior);
    }
    log::info!(
        "chain {stream}: acceptance {:.3}, {} failed evaluations",
        chain.acceptance_rate(),
        chain.solver_failures
    );
    Ok(ChainRun {
        fit,
        log_likelihood_offset: lik.to_dimensional_log_likelihood(0.0),
        scales: *lik.scales(),
        chain,
        burn_in: settings.burn_in,
    })
}

use nalgebra::{Cholesky, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::niw::{niw_posterior, sample_niw, HyperSample, NIWParams};
use crate::data::CurrentTrace;
use crate::error::{Error, Result};
use crate::inference::{
    adaptive_mh_step, chain_start, initial_covariance, mle_fit_with, to_model_params,
    AdaptationSettings, ChainState, ExperimentLikelihood, FitResult, LogLikelihood, LogPrior,
    OptimizerSettings,
};
use crate::model::{ExperimentConfig, ModelParams, PriorHypercube};
use crate::solver::{GridSettings, Scales};

/// Multivariate normal log density on the leading coordinates of a point,
/// up to a constant.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GaussianPrior {
    pub fn new(sample: &HyperSample) -> Result<Self> {
        let chol = Cholesky::new(sample.sigma_mat.clone())
            .ok_or_else(|| Error::Numerical("hyper covariance is not positive definite".into()))?;
        Ok(Self {
            mean: sample.mu.clone(),
            chol,
        })
    }
}

impl LogPrior for GaussianPrior {
    fn log_prior(&self, x: &[f64]) -> f64 {
        let d = self.mean.len();
        let dx = DVector::from_column_slice(&x[..d]) - &self.mean;
        let z = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&dx)
            .unwrap_or_else(|| DVector::from_element(d, f64::INFINITY));
        -0.5 * z.norm_squared()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchicalSettings {
    /// Total Gibbs sweeps, burn-in included.
    pub n_sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Bottom-level MH steps per sweep; zero freezes the bottom chains.
    pub steps_per_sweep: usize,
    pub adaptation: AdaptationSettings,
    pub optimizer: OptimizerSettings,
}

impl Default for HierarchicalSettings {
    fn default() -> Self {
        Self {
            n_sweeps: 10_000,
            burn_in: 5_000,
            seed: 0,
            steps_per_sweep: 1,
            adaptation: AdaptationSettings::default(),
            optimizer: OptimizerSettings::default(),
        }
    }
}

impl HierarchicalSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_sweeps <= self.burn_in {
            return Err(Error::Domain(format!(
                "sweeps ({}) must exceed burn-in ({}); nothing would be retained",
                self.n_sweeps, self.burn_in
            )));
        }
        Ok(())
    }
}

/// Metropolis-within-Gibbs state: one bottom chain per experiment and the
/// current hyper draw.
#[derive(Debug, Clone)]
pub struct GibbsSampler {
    pub chains: Vec<ChainState>,
    pub niw: NIWParams,
    pub current: HyperSample,
    /// Hyper draws after every sweep, burn-in included.
    pub hyper_samples: Vec<HyperSample>,
    pub steps_per_sweep: usize,
    rng: ChaCha8Rng,
}

impl GibbsSampler {
    /// The hyper state starts at `(mu0, psi)` rather than a draw, since the
    /// default hyperprior cannot be sampled.
    pub fn new(
        chains: Vec<ChainState>,
        niw: NIWParams,
        steps_per_sweep: usize,
        seed: u64,
    ) -> Result<Self> {
        if chains.len() < 2 {
            return Err(Error::Domain(format!(
                "hierarchical sampling needs at least 2 experiments, got {}",
                chains.len()
            )));
        }
        let d = niw.dimension();
        if chains.iter().any(|c| c.dimension() < d) {
            return Err(Error::Domain(
                "bottom chains are shorter than the hyperprior".into(),
            ));
        }
        let current = HyperSample {
            mu: niw.mu0.clone(),
            sigma_mat: niw.psi.clone(),
        };
        Ok(Self {
            chains,
            niw,
            current,
            hyper_samples: Vec::new(),
            steps_per_sweep,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Bottom coordinates entering the hyper update.
    pub fn bottom_thetas(&self) -> Vec<Vec<f64>> {
        let d = self.niw.dimension();
        self.chains
            .iter()
            .map(|c| c.current[..d].to_vec())
            .collect()
    }
}

/// Advances every bottom chain under the current `N(mu, Sigma)` prior, then
/// draws new hyper-parameters from their conditional posterior.
pub fn gibbs_sweep<L: LogLikelihood>(sampler: &mut GibbsSampler, likelihoods: &[L]) -> Result<()> {
    if likelihoods.len() != sampler.chains.len() {
        return Err(Error::Domain(
            "one likelihood per bottom chain is required".into(),
        ));
    }
    let prior = GaussianPrior::new(&sampler.current)?;
    let steps = sampler.steps_per_sweep;
    sampler
        .chains
        .par_iter_mut()
        .zip(likelihoods.par_iter())
        .for_each(|(chain, lik)| {
            if steps > 0 {
                chain.refresh_prior(&prior);
            }
            for _ in 0..steps {
                adaptive_mh_step(chain, lik, &prior);
            }
        });
    let posterior = niw_posterior(&sampler.niw, &sampler.bottom_thetas())?;
    sampler.current = sample_niw(&posterior, &mut sampler.rng)?;
    sampler.hyper_samples.push(sampler.current.clone());
    Ok(())
}

/// Output of a hierarchical run. Everything is held in solver units; the
/// accessors convert to physical units.
#[derive(Debug, Clone)]
pub struct HierRunResult {
    /// Post burn-in hyper draws.
    pub hyper_samples: Vec<HyperSample>,
    pub bottom_chains: Vec<ChainState>,
    pub fits: Vec<FitResult>,
    pub scales: Scales,
    pub niw: NIWParams,
    pub settings: HierarchicalSettings,
    pub config: ExperimentConfig,
    pub log_likelihood_offsets: Vec<f64>,
}

impl HierRunResult {
    pub fn hyper_samples_dimensional(&self) -> Vec<HyperSample> {
        let factors = self.scales.physical_factors();
        self.hyper_samples
            .iter()
            .map(|h| h.scaled(&factors))
            .collect()
    }

    fn retained_from(&self) -> usize {
        self.settings.burn_in * self.settings.steps_per_sweep
    }

    /// Retained bottom-level samples of experiment `i`, physical units.
    pub fn bottom_samples_dimensional(&self, i: usize) -> Vec<ModelParams> {
        self.bottom_chains[i]
            .retained(self.retained_from())
            .iter()
            .map(|x| to_model_params(x, &self.scales))
            .collect()
    }

    /// Retained bottom-level log posteriors of experiment `i`, currents in
    /// amperes.
    pub fn bottom_log_posteriors(&self, i: usize) -> Vec<f64> {
        self.bottom_chains[i]
            .retained_log_posteriors(self.retained_from())
            .iter()
            .map(|v| v + self.log_likelihood_offsets[i])
            .collect()
    }
}

/// Fits every trace, starts one bottom chain at each fit and runs the
/// Metropolis-within-Gibbs sampler.
pub fn run_hierarchical(
    data: &[CurrentTrace],
    config: &ExperimentConfig,
    grid: &GridSettings,
    hypercube: &PriorHypercube,
    settings: &HierarchicalSettings,
) -> Result<HierRunResult> {
    settings.validate()?;
    if data.len() < 2 {
        return Err(Error::Domain(format!(
            "hierarchical sampling needs at least 2 experiments, got {}",
            data.len()
        )));
    }
    let likelihoods = data
        .iter()
        .map(|y| ExperimentLikelihood::new(y, config, grid))
        .collect::<Result<Vec<_>>>()?;
    run_hierarchical_with(&likelihoods, config, hypercube, None, settings)
}

/// As [`run_hierarchical`] with prepared likelihoods and an optional
/// hyperprior in solver units (default: [`NIWParams::default_for`] the
/// scaled hypercube).
pub fn run_hierarchical_with(
    likelihoods: &[ExperimentLikelihood],
    config: &ExperimentConfig,
    hypercube: &PriorHypercube,
    niw: Option<NIWParams>,
    settings: &HierarchicalSettings,
) -> Result<HierRunResult> {
    settings.validate()?;
    let scales = *likelihoods
        .first()
        .ok_or_else(|| Error::Domain("no experiments".into()))?
        .scales();
    if likelihoods.iter().any(|l| *l.scales() != scales) {
        return Err(Error::Domain(
            "experiments must share one configuration".into(),
        ));
    }
    let niw =
        niw.unwrap_or_else(|| NIWParams::default_for(&scales.hypercube_dimensionless(hypercube)));
    // the conditional hyper draw is an inverse-Wishart with nu0 + n degrees
    // of freedom, so small families can leave it improper
    let d = niw.dimension() as f64;
    if niw.nu0 + likelihoods.len() as f64 <= d - 1.0 {
        return Err(Error::Domain(format!(
            "{} experiments are too few for the hyperprior: nu0 + n = {} must exceed {}",
            likelihoods.len(),
            niw.nu0 + likelihoods.len() as f64,
            d - 1.0
        )));
    }

    let fits = likelihoods
        .par_iter()
        .enumerate()
        .map(|(i, lik)| {
            mle_fit_with(lik, hypercube, &settings.optimizer)
                .map_err(|e| Error::FitFailure(format!("experiment {}: {e}", i + 1)))
        })
        .collect::<Result<Vec<_>>>()?;

    let start_prior = GaussianPrior::new(&HyperSample {
        mu: niw.mu0.clone(),
        sigma_mat: niw.psi.clone(),
    })?;
    let chains = likelihoods
        .iter()
        .zip(&fits)
        .enumerate()
        .map(|(i, (lik, fit))| {
            let bounds = lik.support(hypercube);
            let x0 = chain_start(fit, &bounds);
            let cov = initial_covariance(&bounds, settings.adaptation.initial_sd_fraction);
            ChainState::new(
                x0,
                bounds,
                cov,
                settings.adaptation.clone(),
                lik,
                &start_prior,
                settings.seed,
                i as u64 + 1,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sampler =
        GibbsSampler::new(chains, niw.clone(), settings.steps_per_sweep, settings.seed)?;
    for sweep in 0..settings.n_sweeps {
        gibbs_sweep(&mut sampler, likelihoods)?;
        if (sweep + 1) % 1000 == 0 {
            log::info!("sweep {}/{}", sweep + 1, settings.n_sweeps);
        }
    }
    for (i, c) in sampler.chains.iter().enumerate() {
        log::info!(
            "experiment {}: acceptance {:.3}, {} failed evaluations",
            i + 1,
            c.acceptance_rate(),
            c.solver_failures
        );
    }

    let hyper_samples = sampler.hyper_samples.split_off(settings.burn_in);
    Ok(HierRunResult {
        hyper_samples,
        bottom_chains: sampler.chains,
        fits,
        scales,
        niw,
        settings: settings.clone(),
        config: config.clone(),
        log_likelihood_offsets: likelihoods
            .iter()
            .map(|l| l.to_dimensional_log_likelihood(0.0))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{Bounds, FlatPrior};
    use nalgebra::DMatrix;

    /// Independent standard normal in every coordinate.
    struct StdNormal(usize);

    impl LogLikelihood for StdNormal {
        fn dimension(&self) -> usize {
            self.0
        }

        fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
            Ok(-0.5 * x.iter().map(|v| v * v).sum::<f64>())
        }
    }

    fn chain(x0: Vec<f64>, seed: u64, stream: u64, prior: &dyn LogPrior) -> ChainState {
        let d = x0.len();
        let bounds = Bounds::new(vec![-5.0; d], vec![5.0; d]).unwrap();
        ChainState::new(
            x0,
            bounds,
            DMatrix::identity(d, d) * 0.5,
            AdaptationSettings::default(),
            &StdNormal(d),
            prior,
            seed,
            stream,
        )
        .unwrap()
    }

    #[test]
    fn huge_hyper_covariance_behaves_like_a_flat_prior() {
        let wide = HyperSample {
            mu: DVector::zeros(3),
            sigma_mat: DMatrix::identity(3, 3) * 1e30,
        };
        let gaussian = GaussianPrior::new(&wide).unwrap();
        let mut a = chain(vec![0.1, 0.2, 0.3], 8, 1, &FlatPrior);
        let mut b = chain(vec![0.1, 0.2, 0.3], 8, 1, &gaussian);
        for _ in 0..2000 {
            adaptive_mh_step(&mut a, &StdNormal(3), &FlatPrior);
            adaptive_mh_step(&mut b, &StdNormal(3), &gaussian);
        }
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.accepted_count, b.accepted_count);
    }

    #[test]
    fn sweeps_stay_in_bounds_and_are_deterministic() {
        let run = || {
            let niw = NIWParams::new(DVector::zeros(3), 0.0, 1.0, DMatrix::identity(3, 3)).unwrap();
            let first = GaussianPrior::new(&HyperSample {
                mu: niw.mu0.clone(),
                sigma_mat: niw.psi.clone(),
            })
            .unwrap();
            let chains = (0..4)
                .map(|i| chain(vec![0.5 * i as f64; 3], 3, i + 1, &first))
                .collect();
            let mut s = GibbsSampler::new(chains, niw, 1, 3).unwrap();
            let liks: Vec<StdNormal> = (0..4).map(|_| StdNormal(3)).collect();
            for _ in 0..300 {
                gibbs_sweep(&mut s, &liks).unwrap();
            }
            for c in &s.chains {
                assert!(c.samples.iter().all(|x| c.bounds.contains(x)));
            }
            s.hyper_samples
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn needs_two_experiments() {
        let niw = NIWParams::new(DVector::zeros(2), 0.0, 1.0, DMatrix::identity(2, 2)).unwrap();
        let one = vec![chain(vec![0.0, 0.0], 1, 1, &FlatPrior)];
        assert!(GibbsSampler::new(one, niw, 1, 0).is_err());
    }

    #[test]
    fn too_few_experiments_for_the_default_hyperprior() {
        let cfg = ExperimentConfig {
            n_time_points: 200,
            ..ExperimentConfig::ferricyanide()
        };
        let grid = crate::solver::SolverGrid::default_for(&cfg).unwrap();
        let trace = crate::solver::simulate(&ModelParams::ferricyanide_fit(), &cfg, &grid).unwrap();
        let liks: Vec<ExperimentLikelihood> = (0..3)
            .map(|_| ExperimentLikelihood::new(&trace, &cfg, &GridSettings::default()).unwrap())
            .collect();
        let settings = HierarchicalSettings {
            n_sweeps: 10,
            burn_in: 5,
            ..Default::default()
        };
        let err = run_hierarchical_with(
            &liks,
            &cfg,
            &PriorHypercube::default_for(&cfg),
            None,
            &settings,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Domain(_)), "{err}");
    }

    #[test]
    fn frozen_chains_give_direct_posterior_draws() {
        let d = 2;
        let niw = NIWParams::new(DVector::zeros(d), 0.0, 1.0, DMatrix::identity(d, d)).unwrap();
        let thetas = [
            vec![0.3, -1.0],
            vec![1.2, 0.4],
            vec![-0.5, 0.1],
            vec![0.9, 0.8],
            vec![0.0, -0.2],
        ];
        let chains = thetas
            .iter()
            .enumerate()
            .map(|(i, t)| chain(t.clone(), 1, i as u64 + 1, &FlatPrior))
            .collect();
        let mut s = GibbsSampler::new(chains, niw.clone(), 0, 21).unwrap();
        let liks: Vec<StdNormal> = (0..thetas.len()).map(|_| StdNormal(d)).collect();
        let n = 20_000;
        for _ in 0..n {
            gibbs_sweep(&mut s, &liks).unwrap();
        }
        let post = niw_posterior(&niw, &thetas).unwrap();
        // analytic moments: E[mu] = m, E[Sigma] = psi / (nu - d - 1)
        let mean_sigma = &post.psi / (post.nu0 - d as f64 - 1.0);
        for k in 0..d {
            let mus: Vec<f64> = s.hyper_samples.iter().map(|h| h.mu[k]).collect();
            let m = mus.iter().sum::<f64>() / n as f64;
            let sd = (mus.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            assert!((m - post.mu0[k]).abs() < 4.0 * sd / (n as f64).sqrt());
            let var_mu = mean_sigma[(k, k)] / post.kappa0;
            assert!(
                (sd * sd - var_mu).abs() < 0.1 * var_mu,
                "{} vs {var_mu}",
                sd * sd
            );
        }
    }

    #[test]
    fn settings_validation() {
        let s = HierarchicalSettings {
            n_sweeps: 10,
            burn_in: 10,
            ..Default::default()
        };
        assert!(matches!(s.validate(), Err(Error::Domain(_))));
    }
}

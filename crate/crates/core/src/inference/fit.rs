use serde::{Deserialize, Serialize};

use super::cmaes::{minimize_unit_box_batch, CmaesSettings};
use super::likelihood::ExperimentLikelihood;
use crate::data::CurrentTrace;
use crate::error::{Error, Result};
use crate::model::{ExperimentConfig, ModelParams, PriorHypercube, N_PHYSICAL};
use crate::solver::{dimensionalise, DimensionlessParams, GridSettings};

/// Settings for the maximum-likelihood search.
pub type OptimizerSettings = CmaesSettings;

/// Profiled noise SD never drops below this fraction of the peak current, so
/// an exact fit still has a finite likelihood.
const SIGMA_FLOOR_FRACTION: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Dimensional estimate; `sigma` is the RMS residual in amperes.
    pub theta_hat: ModelParams,
    /// Log-likelihood at the estimate, with currents in amperes.
    pub log_likelihood_at_hat: f64,
    pub optimizer_evals: usize,
    pub dimensionless: DimensionlessParams,
}

impl FitResult {
    /// `(e0, k0, alpha, cdl, ru, sigma)` in solver units.
    pub fn dimensionless_vector(&self) -> Vec<f64> {
        let d = &self.dimensionless;
        vec![d.e0, d.k0, d.alpha, d.cdl, d.ru, d.sigma]
    }
}

/// Maximum-likelihood fit of one trace, simulated at its own timestamps.
pub fn mle_fit(
    y: &CurrentTrace,
    config: &ExperimentConfig,
    grid: &GridSettings,
    hypercube: &PriorHypercube,
    settings: &OptimizerSettings,
) -> Result<FitResult> {
    let lik = ExperimentLikelihood::new(y, config, grid)?;
    mle_fit_with(&lik, hypercube, settings)
}

/// As [`mle_fit`] for an already prepared likelihood.
pub fn mle_fit_with(
    lik: &ExperimentLikelihood,
    hypercube: &PriorHypercube,
    settings: &OptimizerSettings,
) -> Result<FitResult> {
    let cube = lik.scales().hypercube_dimensionless(hypercube);
    let widths = cube.widths();
    let to_box = |u: &[f64]| -> Vec<f64> {
        (0..N_PHYSICAL)
            .map(|k| (cube.lower[k] + u[k] * widths[k]).clamp(cube.lower[k], cube.upper[k]))
            .collect()
    };
    // residuals relative to the data so the optimiser tolerances are scale free
    let norm: f64 = lik.observed().iter().map(|v| v * v).sum();
    let objective = |us: &[Vec<f64>]| {
        let points: Vec<Vec<f64>> = us.iter().map(|u| to_box(u)).collect();
        lik.sum_squared_residuals_many(&points)
            .into_iter()
            .map(|r| r.ok().map(|ssr| ssr / norm))
            .collect()
    };

    let result =
        minimize_unit_box_batch(objective, N_PHYSICAL, None, settings).ok_or_else(|| {
            Error::FitFailure(format!(
                "no successful model evaluation within {} evaluations",
                settings.max_evaluations
            ))
        })?;

    let x = to_box(&result.best_x);
    let n = lik.n_points() as f64;
    let floor = SIGMA_FLOOR_FRACTION * lik.sigma_upper();
    let ssr = result.best_f * norm;
    let sigma = (ssr / n).sqrt().max(floor);
    let log_lik = -n * sigma.ln() - ssr / (2.0 * sigma * sigma);

    let dimensionless = DimensionlessParams::from_physical(&x, sigma);
    let mut theta_hat = dimensionalise(&dimensionless, lik.scales());
    // guard against round-off pushing a boundary value outside the cube
    let mut v = theta_hat.physical();
    for (k, value) in v.iter_mut().enumerate() {
        *value = value.clamp(hypercube.lower[k], hypercube.upper[k]);
    }
    theta_hat = ModelParams::from_physical(v, theta_hat.sigma);

    log::debug!(
        "mle fit: {} evaluations over {} runs, rms residual {:.3e}",
        result.evaluations,
        result.runs,
        sigma
    );
    Ok(FitResult {
        theta_hat,
        log_likelihood_at_hat: lik.to_dimensional_log_likelihood(log_lik),
        optimizer_evals: result.evaluations,
        dimensionless,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{simulate, SolverGrid};

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            n_time_points: 1500,
            ..ExperimentConfig::ferricyanide()
        }
    }

    fn coarse_grid() -> GridSettings {
        GridSettings {
            n_space: 80,
            gamma: 1.08,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_round_trip() {
        let cfg = small_config();
        let grid = coarse_grid();
        let truth = ModelParams::new(0.214, 0.010, 0.528, 16.9e-6, 20.0, 1e-9);
        let trace = simulate(&truth, &cfg, &SolverGrid::for_config(&cfg, &grid).unwrap()).unwrap();
        let cube = PriorHypercube::default_for(&cfg);
        let fit = mle_fit(&trace, &cfg, &grid, &cube, &OptimizerSettings::default()).unwrap();
        let got = fit.theta_hat.physical();
        let want = truth.physical();
        let tol = [0.005, 0.02, 0.005, 0.005, 0.05];
        for k in 0..N_PHYSICAL {
            let rel = ((got[k] - want[k]) / want[k]).abs();
            assert!(rel < tol[k], "coordinate {k}: {} vs {}", got[k], want[k]);
        }
        assert!(cube.contains(&fit.theta_hat));
    }

    #[test]
    fn zero_trace_is_rejected() {
        let cfg = small_config();
        let times = cfg.time_base(cfg.n_time_points);
        let trace = CurrentTrace::new(times.clone(), vec![0.0; times.len()]).unwrap();
        let cube = PriorHypercube::default_for(&cfg);
        assert!(mle_fit(
            &trace,
            &cfg,
            &coarse_grid(),
            &cube,
            &OptimizerSettings::default()
        )
        .is_err());
    }
}

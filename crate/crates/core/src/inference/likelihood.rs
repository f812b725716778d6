use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::CurrentTrace;
use crate::error::{Error, Result};
use crate::model::{ExperimentConfig, ModelParams, PriorHypercube, N_PHYSICAL};
use crate::solver::{
    DimensionlessParams, GridSettings, Scales, Simulator, SolverGrid, BATCH_LANES,
};

/// Upper end of the uniform prior on the noise SD, as a fraction of the peak
/// |current| of the data.
pub const SIGMA_PRIOR_FRACTION: f64 = 0.1;

/// Log density of a parameter vector given one dataset, up to an additive
/// constant.
pub trait LogLikelihood: Sync {
    fn dimension(&self) -> usize;
    fn log_likelihood(&self, x: &[f64]) -> Result<f64>;
}

/// `-T log(sigma) - sum((y - f)^2) / (2 sigma^2)`.
pub fn gaussian_log_likelihood(observed: &[f64], model: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("noise sd must be > 0, got {sigma}")));
    }
    if observed.len() != model.len() {
        return Err(Error::Domain(format!(
            "{} observations but {} model values",
            observed.len(),
            model.len()
        )));
    }
    let ssr = sum_squared_residuals(observed, model);
    Ok(-(observed.len() as f64) * sigma.ln() - ssr / (2.0 * sigma * sigma))
}

fn sum_squared_residuals(observed: &[f64], model: &[f64]) -> f64 {
    observed
        .iter()
        .zip(model)
        .map(|(y, f)| (y - f) * (y - f))
        .sum()
}

/// Log-likelihood of `y` under `theta`, simulated at the trace's own
/// timestamps with the spatial part of `grid`.
pub fn log_likelihood(
    theta: &ModelParams,
    y: &CurrentTrace,
    config: &ExperimentConfig,
    grid: &SolverGrid,
) -> Result<f64> {
    let sim = Simulator::with_times(config, grid, &y.times, Scales::new(config)?)?;
    let model = sim.currents_amps(theta)?;
    gaussian_log_likelihood(&y.currents, &model, theta.sigma)
}

/// True iff every physical coordinate lies in the closed hypercube.
pub fn prior_contains(theta: &ModelParams, hypercube: &PriorHypercube) -> bool {
    hypercube.contains(theta)
}

/// Closed box support used to reject proposals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Domain("bounds must satisfy lower < upper".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(dim: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.lower.len()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .collect()
    }
}

/// Likelihood of one measured trace in dimensionless coordinates
/// `(e0, k0, alpha, cdl, ru, sigma)`.
#[derive(Debug, Clone)]
pub struct ExperimentLikelihood {
    simulator: Simulator,
    observed: Vec<f64>,
    peak: f64,
}

impl ExperimentLikelihood {
    pub fn new(
        trace: &CurrentTrace,
        config: &ExperimentConfig,
        grid: &GridSettings,
    ) -> Result<Self> {
        trace.validate()?;
        let scales = Scales::new(config)?;
        let grid = SolverGrid::for_config(config, grid)?;
        let simulator = Simulator::with_times(config, &grid, &trace.times, scales)?;
        let observed: Vec<f64> = trace.currents.iter().map(|v| v / scales.current).collect();
        let peak = observed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak == 0.0 {
            return Err(Error::Validation("trace is identically zero".into()));
        }
        Ok(Self {
            simulator,
            observed,
            peak,
        })
    }

    pub fn scales(&self) -> &Scales {
        self.simulator.scales()
    }

    pub fn n_points(&self) -> usize {
        self.observed.len()
    }

    pub fn observed(&self) -> &[f64] {
        &self.observed
    }

    pub fn sigma_upper(&self) -> f64 {
        SIGMA_PRIOR_FRACTION * self.peak
    }

    pub fn simulate(&self, physical: &[f64]) -> Result<Vec<f64>> {
        self.simulator
            .currents(&DimensionlessParams::from_physical(physical, 1.0))
    }

    pub fn sum_squared_residuals(&self, physical: &[f64]) -> Result<f64> {
        let model = self.simulate(physical)?;
        Ok(sum_squared_residuals(&self.observed, &model))
    }

    /// [`Self::sum_squared_residuals`] for many points, simulated in lane
    /// batches spread over the thread pool.
    pub fn sum_squared_residuals_many(&self, points: &[Vec<f64>]) -> Vec<Result<f64>> {
        let params: Vec<DimensionlessParams> = points
            .iter()
            .map(|x| DimensionlessParams::from_physical(&x[..N_PHYSICAL], 1.0))
            .collect();
        params
            .par_chunks(BATCH_LANES)
            .flat_map_iter(|chunk| self.simulator.currents_many(chunk))
            .map(|model| model.map(|m| sum_squared_residuals(&self.observed, &m)))
            .collect()
    }

    /// Six-dimensional support: the dimensionless hypercube plus
    /// `sigma in [0, sigma_upper]`.
    pub fn support(&self, cube: &PriorHypercube) -> Bounds {
        let scaled = self.scales().hypercube_dimensionless(cube);
        let mut lower = scaled.lower.to_vec();
        let mut upper = scaled.upper.to_vec();
        lower.push(0.0);
        upper.push(self.sigma_upper());
        Bounds { lower, upper }
    }

    /// Converts a dimensionless log-likelihood to amperes.
    pub fn to_dimensional_log_likelihood(&self, value: f64) -> f64 {
        value - self.n_points() as f64 * self.scales().current.ln()
    }
}

impl LogLikelihood for ExperimentLikelihood {
    fn dimension(&self) -> usize {
        N_PHYSICAL + 1
    }

    fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        let model = self.simulate(&x[..N_PHYSICAL])?;
        gaussian_log_likelihood(&self.observed, &model, x[N_PHYSICAL])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_residual() {
        let y = [1.0, 2.0, 3.0];
        let l = gaussian_log_likelihood(&y, &y, 0.5).unwrap();
        assert!((l - (-3.0 * 0.5f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn unit_standardised_residual() {
        let sigma = 0.37;
        let l = gaussian_log_likelihood(&[1.0 + sigma], &[1.0], sigma).unwrap();
        assert!((l - (-sigma.ln() - 0.5)).abs() < 1e-14);
    }

    #[test]
    fn matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let y: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f: Vec<f64> = (0..100).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sigma = 0.2;
        // direct product of normal densities, constants dropped
        let mut direct = 0.0;
        for t in 0..100 {
            let z = (y[t] - f[t]) / sigma;
            direct += -0.5 * z * z - sigma.ln();
        }
        let l = gaussian_log_likelihood(&y, &f, sigma).unwrap();
        assert!(((l - direct) / direct).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_sigma_is_domain_error() {
        assert!(matches!(
            gaussian_log_likelihood(&[1.0], &[1.0], 0.0),
            Err(Error::Domain(_))
        ));
        assert!(gaussian_log_likelihood(&[1.0], &[1.0], -1.0).is_err());
    }

    #[test]
    fn acceptance_ratio_from_log_differences() {
        // small T so the ratio of densities is representable
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let y: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f1: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f2: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (s1, s2) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
            let density = |f: &[f64], s: f64| -> f64 {
                y.iter()
                    .zip(f)
                    .map(|(a, b)| {
                        (-(a - b) * (a - b) / (2.0 * s * s)).exp()
                            / (2.0 * std::f64::consts::PI * s * s).sqrt()
                    })
                    .product()
            };
            let ratio = density(&f2, s2) / density(&f1, s1);
            let from_logs = (gaussian_log_likelihood(&y, &f2, s2).unwrap()
                - gaussian_log_likelihood(&y, &f1, s1).unwrap())
            .exp();
            assert!(((ratio.min(1.0) - from_logs.min(1.0)) / ratio.min(1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn prior_examples() {
        let cfg = ExperimentConfig::ferricyanide();
        let cube = PriorHypercube::default_for(&cfg);
        let mid = ModelParams::from_physical(cube.centre(), 1e-6);
        assert!(prior_contains(&mid, &cube));
        let mut p = mid;
        p.alpha = 0.61;
        assert!(!prior_contains(&p, &cube));
        let mut p = mid;
        p.k0 = 0.0;
        assert!(prior_contains(&p, &cube));
    }

    proptest! {
        #[test]
        fn invariant_under_reordering(pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..60), rot in 0usize..60) {
            let (y, f): (Vec<f64>, Vec<f64>) = pairs.iter().cloned().unzip();
            let a = gaussian_log_likelihood(&y, &f, 1.3).unwrap();
            let mut rotated = pairs.clone();
            let k = rot % rotated.len();
            rotated.rotate_left(k);
            rotated.reverse();
            let (y2, f2): (Vec<f64>, Vec<f64>) = rotated.into_iter().unzip();
            let b = gaussian_log_likelihood(&y2, &f2, 1.3).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()));
        }
    }
}

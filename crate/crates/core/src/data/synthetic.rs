use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ExperimentConfig, ModelParams, PriorHypercube, N_PHYSICAL};
use crate::solver::{dimensionalise, DimensionlessParams, Simulator, SolverGrid};

use super::CurrentTrace;

const MAX_REJECTIONS: usize = 1000;

/// How to draw a family of synthetic experiments. Means and standard
/// deviations are in dimensionless units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub theta_mean: [f64; N_PHYSICAL],
    pub theta_sd: [f64; N_PHYSICAL],
    pub n_sets: usize,
    /// Noise standard deviation as a fraction of the peak |current|.
    pub noise_fraction: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Ten datasets around `(7.27, 2.01, 0.53, 3.70e-3, 1.06e-2)` with 0.3%
    /// noise.
    pub fn reference(seed: u64) -> Self {
        Self {
            theta_mean: [7.27, 2.01, 0.53, 3.70e-3, 1.06e-2],
            theta_sd: [0.06, 0.7, 0.005, 0.7e-3, 0.3e-2],
            n_sets: 10,
            noise_fraction: 0.003,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sets == 0 {
            return Err(Error::Spec("n_sets must be >= 1".into()));
        }
        if self
            .theta_mean
            .iter()
            .chain(&self.theta_sd)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Spec("non-finite mean or sd".into()));
        }
        if self.theta_sd.iter().any(|&s| s < 0.0) {
            return Err(Error::Spec("theta_sd must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.noise_fraction) {
            return Err(Error::Spec("noise_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub index: usize,
    pub trace: CurrentTrace,
    /// Generating parameters in physical units; `sigma` is the noise SD.
    pub theta: ModelParams,
    pub theta_dimensionless: [f64; N_PHYSICAL],
    /// A
    pub noise_sd: f64,
}

/// Draws `n_sets` parameter vectors from the truncated diagonal normal, simulates
/// each on the experiment's time base and adds white Gaussian noise. Dataset
/// `i` uses its own stream `i` of the seeded generator.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    config: &ExperimentConfig,
    grid: &SolverGrid,
) -> Result<Vec<SyntheticDataset>> {
    spec.validate()?;
    let sim = Simulator::new(config, grid)?;
    let scales = *sim.scales();
    let cube = scales.hypercube_dimensionless(&PriorHypercube::default_for(config));

    (0..spec.n_sets)
        .into_par_iter()
        .map(|index| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(index as u64);

            let theta = draw_inside(spec, &cube, &mut rng)?;
            let params = DimensionlessParams::from_physical(&theta, 1.0);
            let clean = sim.currents(&params)?;
            let peak = clean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let noise_sd = spec.noise_fraction * peak;
            let currents: Vec<f64> = if noise_sd > 0.0 {
                let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::Spec(e.to_string()))?;
                clean
                    .iter()
                    .map(|v| (v + noise.sample(&mut rng)) * scales.current)
                    .collect()
            } else {
                clean.iter().map(|v| v * scales.current).collect()
            };
            let mut physical = dimensionalise(&params, &scales);
            physical.sigma = noise_sd * scales.current;
            Ok(SyntheticDataset {
                index,
                trace: CurrentTrace::new(sim.times().to_vec(), currents)?,
                theta: physical,
                theta_dimensionless: theta,
                noise_sd: noise_sd * scales.current,
            })
        })
        .collect()
}

fn draw_inside(
    spec: &SyntheticSpec,
    cube: &PriorHypercube,
    rng: &mut ChaCha8Rng,
) -> Result<[f64; N_PHYSICAL]> {
    for _ in 0..=MAX_REJECTIONS {
        let theta: [f64; N_PHYSICAL] = std::array::from_fn(|k| {
            let z: f64 = StandardNormal.sample(rng);
            spec.theta_mean[k] + spec.theta_sd[k] * z
        });
        if cube.contains_vec(&theta) {
            return Ok(theta);
        }
    }
    Err(Error::Spec(format!(
        "parameter draws fell outside the prior hypercube {MAX_REJECTIONS} times"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ExperimentConfig;

    fn setup(n_time: usize) -> (ExperimentConfig, SolverGrid) {
        let mut cfg = ExperimentConfig::ferricyanide();
        cfg.n_time_points = n_time;
        let grid = SolverGrid::default_for(&cfg).unwrap();
        (cfg, grid)
    }

    #[test]
    fn degenerate_spec_gives_identical_traces() {
        let (cfg, grid) = setup(300);
        let mut spec = SyntheticSpec::reference(1);
        spec.theta_sd = [0.0; 5];
        spec.noise_fraction = 0.0;
        spec.n_sets = 3;
        let sets = generate_synthetic(&spec, &cfg, &grid).unwrap();
        assert_eq!(sets.len(), 3);
        assert_eq!(sets[0].trace, sets[1].trace);
        assert_eq!(sets[1].trace, sets[2].trace);
        assert_eq!(sets[0].theta_dimensionless, spec.theta_mean);
    }

    #[test]
    fn seeded_and_distinct() {
        let (cfg, grid) = setup(200);
        let mut spec = SyntheticSpec::reference(9);
        spec.n_sets = 2;
        let a = generate_synthetic(&spec, &cfg, &grid).unwrap();
        let b = generate_synthetic(&spec, &cfg, &grid).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.trace, y.trace);
            assert_eq!(x.theta, y.theta);
        }
        spec.seed = 10;
        let c = generate_synthetic(&spec, &cfg, &grid).unwrap();
        assert_ne!(a[0].trace, c[0].trace);
        assert_ne!(a[0].theta, a[1].theta);
    }

    #[test]
    fn empirical_noise_matches_request() {
        let (cfg, grid) = setup(25_000);
        let mut spec = SyntheticSpec::reference(3);
        spec.n_sets = 1;
        let set = &generate_synthetic(&spec, &cfg, &grid).unwrap()[0];
        let sim = Simulator::new(&cfg, &grid).unwrap();
        let clean = sim.currents_amps(&set.theta).unwrap();
        let n = clean.len() as f64;
        let resid: Vec<f64> = set
            .trace
            .currents
            .iter()
            .zip(&clean)
            .map(|(a, b)| a - b)
            .collect();
        let mean = resid.iter().sum::<f64>() / n;
        let sd = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(
            (sd / set.noise_sd - 1.0).abs() < 0.05,
            "sd {sd} vs {}",
            set.noise_sd
        );
        let peak = clean.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((set.noise_sd - 0.003 * peak).abs() < 1e-12 * peak);
    }

    #[test]
    fn invalid_specs() {
        let (cfg, grid) = setup(50);
        let mut spec = SyntheticSpec::reference(0);
        spec.n_sets = 0;
        assert!(matches!(
            generate_synthetic(&spec, &cfg, &grid),
            Err(Error::Spec(_))
        ));
        let mut spec = SyntheticSpec::reference(0);
        spec.theta_mean[2] = 0.9; // alpha far outside [0.4, 0.6]
        spec.n_sets = 1;
        assert!(matches!(
            generate_synthetic(&spec, &cfg, &grid),
            Err(Error::Spec(_))
        ));
        let mut spec = SyntheticSpec::reference(0);
        spec.noise_fraction = 1.0;
        assert!(spec.validate().is_err());
    }
}

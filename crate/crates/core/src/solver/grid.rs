use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ExperimentConfig;

use super::scaling::Scales;

/// The outer boundary must sit beyond this many diffusion lengths
/// `sqrt(T*)` of the whole record.
pub const MIN_EXTENT: f64 = 6.0;

/// User-facing grid knobs; the time count comes from the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    pub n_space: usize,
    pub gamma: f64,
    /// `x_max / sqrt(T*)`
    pub extent: f64,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            n_space: 200,
            gamma: 1.05,
            extent: 8.0,
        }
    }
}

impl GridSettings {
    pub fn validate(&self) -> Result<()> {
        if self.n_space < 2 {
            return Err(Error::InvalidConfig("grid.n_space must be >= 2".into()));
        }
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig("grid.gamma must be >= 1".into()));
        }
        if !(self.extent >= MIN_EXTENT) {
            return Err(Error::InvalidConfig(format!(
                "grid.extent must be >= {MIN_EXTENT}"
            )));
        }
        Ok(())
    }
}

/// Exponentially expanding spatial grid (dimensionless) plus the number of
/// output time points.
///
/// Cell `j` has width `h0 * gamma^j`; node 0 is the electrode surface and node
/// `n_space` sits at `x_max`, where the bulk concentration is imposed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverGrid {
    pub n_space: usize,
    pub gamma: f64,
    pub h0: f64,
    pub x_max: f64,
    pub n_time: usize,
}

impl SolverGrid {
    pub fn new(n_space: usize, gamma: f64, x_max: f64, n_time: usize) -> Result<Self> {
        if n_space < 2 || n_time < 1 {
            return Err(Error::InvalidConfig(
                "grid needs n_space >= 2, n_time >= 1".into(),
            ));
        }
        if !(gamma >= 1.0) || !(x_max > 0.0) || !x_max.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "invalid grid: gamma {gamma}, x_max {x_max}"
            )));
        }
        let span = if gamma == 1.0 {
            n_space as f64
        } else {
            (gamma.powi(n_space as i32) - 1.0) / (gamma - 1.0)
        };
        Ok(Self {
            n_space,
            gamma,
            h0: x_max / span,
            x_max,
            n_time,
        })
    }

    /// Grid for `total_time` dimensionless time units.
    pub fn for_duration(settings: &GridSettings, total_time: f64, n_time: usize) -> Result<Self> {
        settings.validate()?;
        Self::new(
            settings.n_space,
            settings.gamma,
            settings.extent * total_time.sqrt(),
            n_time,
        )
    }

    /// Grid for the experiment under the default scales.
    pub fn for_config(config: &ExperimentConfig, settings: &GridSettings) -> Result<Self> {
        let scales = Scales::new(config)?;
        Self::for_duration(
            settings,
            config.duration() / scales.time,
            config.n_time_points,
        )
    }

    pub fn default_for(config: &ExperimentConfig) -> Result<Self> {
        Self::for_config(config, &GridSettings::default())
    }

    /// Node positions `x_0 = 0 < x_1 < ... < x_n_space = x_max`.
    pub fn nodes(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.n_space + 1);
        let mut pos = 0.0;
        let mut h = self.h0;
        x.push(0.0);
        for _ in 0..self.n_space {
            pos += h;
            h *= self.gamma;
            x.push(pos);
        }
        // pin the last node to remove accumulated rounding
        x[self.n_space] = self.x_max;
        x
    }

    /// Twice the cells and time points over the same domain. The refined
    /// spatial grid contains every node of the coarse one.
    pub fn refined(&self) -> Result<Self> {
        Self::new(
            self.n_space * 2,
            self.gamma.sqrt(),
            self.x_max,
            self.n_time * 2,
        )
    }

    /// Checks the outer boundary clears `MIN_EXTENT` diffusion lengths.
    pub fn check_extent(&self, total_time: f64) -> Result<()> {
        let needed = MIN_EXTENT * total_time.sqrt();
        if self.x_max < needed * (1.0 - 1e-12) {
            return Err(Error::InvalidConfig(format!(
                "grid x_max {} is inside the diffusion layer; need >= {needed}",
                self.x_max
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nodes_increase_from_zero() {
        let g = SolverGrid::new(200, 1.05, 50.0, 100).unwrap();
        let x = g.nodes();
        assert_eq!(x.len(), 201);
        assert_eq!(x[0], 0.0);
        assert!(x.windows(2).all(|w| w[1] > w[0]));
        assert!((x[1] - g.h0).abs() < 1e-15);
        assert_eq!(*x.last().unwrap(), 50.0);
        let sum: f64 = (0..200).map(|j| g.h0 * 1.05f64.powi(j)).sum();
        assert!((sum - 50.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_grid() {
        let g = SolverGrid::new(10, 1.0, 5.0, 10).unwrap();
        assert!((g.h0 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn refinement_is_nested() {
        let g = SolverGrid::new(50, 1.1, 30.0, 100).unwrap();
        let r = g.refined().unwrap();
        let (xc, xf) = (g.nodes(), r.nodes());
        for (j, x) in xc.iter().enumerate() {
            assert!((x - xf[2 * j]).abs() < 1e-10 * 30.0);
        }
        assert_eq!(r.n_time, 200);
    }

    #[test]
    fn default_extent() {
        let cfg = ExperimentConfig::ferricyanide();
        let g = SolverGrid::default_for(&cfg).unwrap();
        let scales = Scales::new(&cfg).unwrap();
        let total = cfg.duration() / scales.time;
        assert!(g.check_extent(total).is_ok());
        assert_eq!(g.n_time, 25_000);
        let tight = SolverGrid::new(200, 1.05, 5.0 * total.sqrt(), 10).unwrap();
        assert!(tight.check_extent(total).is_err());
    }
}

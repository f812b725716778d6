//! Reference scales mapping the dimensional model onto a unit-rate problem.
//!
//! With `v_ref` a reference sweep rate (by default `|v|`):
//!
//! ```text
//! E* = E F/(RT)          t* = t v_ref F/(RT)        x* = x / sqrt(D RT/(v_ref F))
//! I* = I / (F S c sqrt(D v_ref F/(RT)))             k0* = k0 / sqrt(D v_ref F/(RT))
//! ```
//!
//! `cdl*` and `ru*` are chosen so the capacitive current and the ohmic drop
//! keep their dimensional form: `I_c* = cdl* dE_eff*/dt*`, `E_drop* = I* ru*`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ExperimentConfig, ModelParams, PhysicalConstants, PriorHypercube, N_PHYSICAL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    /// F/(RT), 1/V
    pub potential: f64,
    /// seconds per unit dimensionless time
    pub time: f64,
    /// cm per unit dimensionless length
    pub length: f64,
    /// A per unit dimensionless current
    pub current: f64,
    /// cm/s per unit dimensionless rate constant
    pub rate: f64,
    /// F/cm² per unit dimensionless capacitance
    pub capacitance: f64,
    /// Ω per unit dimensionless resistance
    pub resistance: f64,
}

impl Scales {
    /// Scales referenced to the configured sweep rate, giving a dimensionless
    /// scan rate of one.
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        Self::with_reference_rate(config, config.scan_rate_v.abs())
    }

    pub fn with_reference_rate(config: &ExperimentConfig, reference_rate: f64) -> Result<Self> {
        if !(reference_rate.is_finite() && reference_rate > 0.0) || config.scan_rate_v == 0.0 {
            return Err(Error::InvalidConfig("scan rate must be non-zero".into()));
        }
        let consts = PhysicalConstants::STANDARD;
        let potential = consts.inverse_thermal_voltage(config.temperature);
        let time = 1.0 / (reference_rate * potential);
        let d = config.diffusion_d;
        let length = (d * time).sqrt();
        let rate = d / length;
        let current = consts.faraday_f * config.electrode_area_s * config.bulk_conc * rate;
        let capacitance = potential * time * current / config.electrode_area_s;
        let resistance = 1.0 / (potential * current);
        Ok(Self {
            potential,
            time,
            length,
            current,
            rate,
            capacitance,
            resistance,
        })
    }

    /// Multipliers taking dimensionless `(e0, k0, alpha, cdl, ru)` to
    /// V, cm/s, 1, F/cm² and Ω.
    pub fn physical_factors(&self) -> [f64; N_PHYSICAL] {
        [
            1.0 / self.potential,
            self.rate,
            1.0,
            self.capacitance,
            self.resistance,
        ]
    }

    pub fn to_dimensionless(&self, physical: &[f64; N_PHYSICAL]) -> [f64; N_PHYSICAL] {
        let f = self.physical_factors();
        std::array::from_fn(|k| physical[k] / f[k])
    }

    pub fn to_dimensional(&self, scaled: &[f64; N_PHYSICAL]) -> [f64; N_PHYSICAL] {
        let f = self.physical_factors();
        std::array::from_fn(|k| scaled[k] * f[k])
    }

    pub fn hypercube_dimensionless(&self, cube: &PriorHypercube) -> PriorHypercube {
        PriorHypercube {
            lower: self.to_dimensionless(&cube.lower),
            upper: self.to_dimensionless(&cube.upper),
        }
    }
}

/// Parameters of the scaled problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimensionlessParams {
    pub e0: f64,
    pub k0: f64,
    pub alpha: f64,
    pub cdl: f64,
    pub ru: f64,
    pub sigma: f64,
}

impl DimensionlessParams {
    pub fn from_physical(v: &[f64], sigma: f64) -> Self {
        Self {
            e0: v[0],
            k0: v[1],
            alpha: v[2],
            cdl: v[3],
            ru: v[4],
            sigma,
        }
    }

    pub fn physical(&self) -> [f64; N_PHYSICAL] {
        [self.e0, self.k0, self.alpha, self.cdl, self.ru]
    }
}

/// Scale `params` with the default (unit scan rate) scales.
pub fn nondimensionalise(
    params: &ModelParams,
    config: &ExperimentConfig,
) -> Result<(DimensionlessParams, Scales)> {
    let scales = Scales::new(config)?;
    Ok((nondimensionalise_with(params, &scales), scales))
}

pub fn nondimensionalise_with(params: &ModelParams, scales: &Scales) -> DimensionlessParams {
    let v = scales.to_dimensionless(&params.physical());
    DimensionlessParams::from_physical(&v, params.sigma / scales.current)
}

pub fn dimensionalise(params: &DimensionlessParams, scales: &Scales) -> ModelParams {
    let v = scales.to_dimensional(&params.physical());
    ModelParams::from_physical(v, params.sigma * scales.current)
}

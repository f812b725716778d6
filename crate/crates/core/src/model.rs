//! Experiment configuration, physical parameters and the applied waveform.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::GridSettings;

/// Names of the five physical parameters, in vector order.
pub const PARAM_NAMES: [&str; 5] = ["e0", "k0", "alpha", "cdl", "ru"];

/// Number of physical parameters shared by every experiment.
pub const N_PHYSICAL: usize = 5;

/// Faraday and gas constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    /// C/mol
    pub faraday_f: f64,
    /// J/(mol K)
    pub gas_r: f64,
}

impl PhysicalConstants {
    pub const STANDARD: PhysicalConstants = PhysicalConstants {
        faraday_f: 96485.332,
        gas_r: 8.314462,
    };

    /// `F / (R T)` in 1/V.
    pub fn inverse_thermal_voltage(&self, temperature: f64) -> f64 {
        self.faraday_f / (self.gas_r * temperature)
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::STANDARD
    }
}

fn default_temperature() -> f64 {
    298.15
}

fn default_n_time_points() -> usize {
    25_000
}

/// Instrument, waveform and cell constants for one AC voltammetry run.
///
/// `scan_rate_v` is signed: a downward sweep (`e_reverse < e_start`) has a
/// negative rate so the ramp is always `e_start + scan_rate_v * t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// V
    pub e_start: f64,
    /// V
    pub e_reverse: f64,
    /// V/s, signed
    pub scan_rate_v: f64,
    /// Sine amplitude, V
    pub delta_e: f64,
    /// Hz
    pub frequency: f64,
    /// cm²
    pub electrode_area_s: f64,
    /// cm²/s
    pub diffusion_d: f64,
    /// mol/cm³
    pub bulk_conc: f64,
    /// K
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_n_time_points")]
    pub n_time_points: usize,
}

impl ExperimentConfig {
    /// The ferricyanide reduction setup: 3 mm glassy carbon disk, 9.02 Hz,
    /// 80 mV amplitude, 0.894 V/s sweep from 0.5 V down to -0.1 V.
    pub fn ferricyanide() -> Self {
        Self {
            e_start: 0.5,
            e_reverse: -0.1,
            scan_rate_v: -0.894,
            delta_e: 0.080,
            frequency: 9.02,
            electrode_area_s: 0.070,
            diffusion_d: 7.2e-6,
            bulk_conc: 1.0e-6,
            temperature: default_temperature(),
            n_time_points: default_n_time_points(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.e_start,
            self.e_reverse,
            self.scan_rate_v,
            self.delta_e,
            self.frequency,
            self.electrode_area_s,
            self.diffusion_d,
            self.bulk_conc,
            self.temperature,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite value".into()));
        }
        let positive = [
            ("electrode_area_s", self.electrode_area_s),
            ("diffusion_d", self.diffusion_d),
            ("bulk_conc", self.bulk_conc),
            ("temperature", self.temperature),
            ("frequency", self.frequency),
        ];
        for (name, value) in positive {
            if value <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be > 0, got {value}"
                )));
            }
        }
        if self.delta_e < 0.0 {
            return Err(Error::InvalidConfig("delta_e must be >= 0".into()));
        }
        if self.n_time_points < 2 {
            return Err(Error::InvalidConfig("n_time_points must be >= 2".into()));
        }
        if self.scan_rate_v == 0.0 {
            return Err(Error::InvalidConfig("scan_rate_v must be non-zero".into()));
        }
        let sweep = self.e_reverse - self.e_start;
        if sweep == 0.0 || sweep.signum() != self.scan_rate_v.signum() {
            return Err(Error::InvalidConfig(
                "sign of scan_rate_v must match e_reverse - e_start".into(),
            ));
        }
        Ok(())
    }

    /// Switching time of the triangular ramp, s.
    pub fn t_reverse(&self) -> f64 {
        (self.e_reverse - self.e_start) / self.scan_rate_v
    }

    /// Full record length `2 t_reverse`, s.
    pub fn duration(&self) -> f64 {
        2.0 * self.t_reverse()
    }

    /// Angular frequency, rad/s.
    pub fn omega(&self) -> f64 {
        2.0 * PI * self.frequency
    }

    /// Potential window `e_start - e_reverse` (signed).
    pub fn potential_window(&self) -> f64 {
        self.e_start - self.e_reverse
    }

    /// Uniform output times `t_j = j * duration / n`, `j = 1..=n`.
    ///
    /// `t = 0` is excluded: the record starts one step after the initial
    /// equilibrium state.
    pub fn time_base(&self, n: usize) -> Vec<f64> {
        let dt = self.duration() / n as f64;
        (1..=n).map(|j| j as f64 * dt).collect()
    }

    pub fn waveform(&self) -> Waveform {
        Waveform {
            e_start: self.e_start,
            scan_rate: self.scan_rate_v,
            t_reverse: self.t_reverse(),
            amplitude: self.delta_e,
            omega: self.omega(),
        }
    }
}

/// Unchecked evaluator for the ramped sine; see [`applied_potential`].
#[derive(Debug, Clone, Copy)]
pub struct Waveform {
    pub e_start: f64,
    pub scan_rate: f64,
    pub t_reverse: f64,
    pub amplitude: f64,
    pub omega: f64,
}

impl Waveform {
    #[inline]
    pub fn potential(&self, t: f64) -> f64 {
        let ramp = if t <= self.t_reverse {
            self.scan_rate * t
        } else {
            -self.scan_rate * t + 2.0 * self.scan_rate * self.t_reverse
        };
        self.e_start + ramp + self.amplitude * (self.omega * t).sin()
    }

    /// Derivative of [`Waveform::potential`]; the reverse branch is used at
    /// `t == t_reverse`.
    #[inline]
    pub fn rate(&self, t: f64) -> f64 {
        let ramp = if t < self.t_reverse {
            self.scan_rate
        } else {
            -self.scan_rate
        };
        ramp + self.amplitude * self.omega * (self.omega * t).cos()
    }
}

fn check_time(t: f64, config: &ExperimentConfig) -> Result<()> {
    let end = config.duration();
    // one ulp-scale allowance so the last sample of a time base is accepted
    let slack = 1e-12 * end;
    if !t.is_finite() || t < -slack || t > end + slack {
        return Err(Error::Domain(format!("time {t} s outside [0, {end}] s")));
    }
    Ok(())
}

/// Applied potential `E_start ± v t + ΔE sin(ωt)` on `[0, 2 t_reverse]`, V.
pub fn applied_potential(t: f64, config: &ExperimentConfig) -> Result<f64> {
    check_time(t, config)?;
    Ok(config.waveform().potential(t))
}

/// Time derivative of [`applied_potential`], V/s. At the switching corner the
/// one-sided reverse-branch rate is returned.
pub fn applied_potential_rate(t: f64, config: &ExperimentConfig) -> Result<f64> {
    check_time(t, config)?;
    Ok(config.waveform().rate(t))
}

/// The five physical parameters plus the noise standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Formal potential, V
    pub e0: f64,
    /// Standard rate constant, cm/s
    pub k0: f64,
    /// Charge transfer coefficient
    pub alpha: f64,
    /// Double layer capacitance, F/cm²
    pub cdl: f64,
    /// Uncompensated resistance, Ω
    pub ru: f64,
    /// Noise standard deviation, A
    #[serde(default = "default_sigma")]
    pub sigma: f64,
}

fn default_sigma() -> f64 {
    1e-9
}

impl ModelParams {
    pub fn new(e0: f64, k0: f64, alpha: f64, cdl: f64, ru: f64, sigma: f64) -> Self {
        Self {
            e0,
            k0,
            alpha,
            cdl,
            ru,
            sigma,
        }
    }

    /// Best fit for dataset 1 of the ferricyanide series.
    pub fn ferricyanide_fit() -> Self {
        Self::new(0.214, 0.010, 0.528, 16.9e-6, 0.0, 1e-9)
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.physical();
        if v.iter().any(|x| !x.is_finite()) || !self.sigma.is_finite() {
            return Err(Error::Validation("non-finite parameter".into()));
        }
        if self.k0 < 0.0 || self.cdl < 0.0 || self.ru < 0.0 {
            return Err(Error::Validation("k0, cdl and ru must be >= 0".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Validation(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.sigma <= 0.0 {
            return Err(Error::Validation("sigma must be > 0".into()));
        }
        Ok(())
    }

    pub fn physical(&self) -> [f64; N_PHYSICAL] {
        [self.e0, self.k0, self.alpha, self.cdl, self.ru]
    }

    pub fn from_physical(v: [f64; N_PHYSICAL], sigma: f64) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], sigma)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let params: ModelParams = toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        params.validate()?;
        Ok(params)
    }
}

/// Closed box bounding the uniform prior over `(e0, k0, alpha, cdl, ru)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorHypercube {
    pub lower: [f64; N_PHYSICAL],
    pub upper: [f64; N_PHYSICAL],
}

impl PriorHypercube {
    pub fn new(lower: [f64; N_PHYSICAL], upper: [f64; N_PHYSICAL]) -> Result<Self> {
        for k in 0..N_PHYSICAL {
            if !(lower[k] < upper[k]) {
                return Err(Error::InvalidConfig(format!(
                    "hypercube bound for {} is empty: [{}, {}]",
                    PARAM_NAMES[k], lower[k], upper[k]
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Default bounds: E0 inside the sweep window less 10% at each end,
    /// k0 in [0, 1] cm/s, alpha in [0.4, 0.6], Cdl in [0, 200] µF/cm²,
    /// Ru in [0, 80] Ω.
    pub fn default_for(config: &ExperimentConfig) -> Self {
        let window = config.potential_window();
        let e_a = config.e_reverse + 0.1 * window;
        let e_b = config.e_start - 0.1 * window;
        Self {
            lower: [e_a.min(e_b), 0.0, 0.4, 0.0, 0.0],
            upper: [e_a.max(e_b), 1.0, 0.6, 200e-6, 80.0],
        }
    }

    pub fn contains(&self, theta: &ModelParams) -> bool {
        self.contains_vec(&theta.physical())
    }

    pub fn contains_vec(&self, v: &[f64]) -> bool {
        v.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (lo, hi))| *x >= *lo && *x <= *hi)
    }

    pub fn widths(&self) -> [f64; N_PHYSICAL] {
        std::array::from_fn(|k| self.upper[k] - self.lower[k])
    }

    pub fn centre(&self) -> [f64; N_PHYSICAL] {
        std::array::from_fn(|k| 0.5 * (self.upper[k] + self.lower[k]))
    }
}

/// Contents of a run configuration file: the experiment keys at top level and
/// an optional `[grid]` table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub experiment: ExperimentConfig,
    pub grid: GridSettings,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let invalid = |e: toml::de::Error| Error::InvalidConfig(e.to_string());
        let mut table: toml::Table = toml::from_str(text).map_err(invalid)?;
        let grid = match table.remove("grid") {
            Some(value) => value
                .try_into()
                .map_err(|e: toml::de::Error| Error::InvalidConfig(format!("[grid]: {e}")))?,
            None => GridSettings::default(),
        };
        let experiment: ExperimentConfig = table.try_into().map_err(invalid)?;
        let cfg = RunConfig { experiment, grid };
        cfg.experiment.validate()?;
        cfg.grid.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

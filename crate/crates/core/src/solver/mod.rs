//! Implicit finite-difference solution of planar diffusion with
//! Butler-Volmer kinetics, ohmic drop and double-layer charging.
//!
//! Each time step is fully implicit (backward Euler). The spatial operator is
//! the standard three-point central difference on the expanding grid, written
//! in control-volume form so the surface node carries a half cell. Because the
//! tridiagonal matrix depends only on the grid and the step size, it is
//! factored once; the surface flux enters the right-hand side linearly, so
//! the new concentration field is `base + I_f * w` with `w = M⁻¹ e₀` fixed.
//! That leaves a scalar nonlinear equation for the total current per step,
//! solved by damped Newton iteration.
//!
//! Sign convention: anodic (oxidation) current is positive, so the reduction
//! wave of species A appears as a negative current.

mod grid;
mod scaling;

pub use grid::{GridSettings, SolverGrid, MIN_EXTENT};
pub use scaling::{
    dimensionalise, nondimensionalise, nondimensionalise_with, DimensionlessParams, Scales,
};

use serde::Serialize;

use crate::data::CurrentTrace;
use crate::error::{Error, Result};
use crate::model::{ExperimentConfig, ModelParams, Waveform};

const NEWTON_RTOL: f64 = 1e-10;
const NEWTON_ATOL: f64 = 1e-14;
const NEWTON_MAX_ITER: usize = 100;
/// Parameter sets advanced together by [`Simulator::currents_many`].
pub const BATCH_LANES: usize = 8;

/// Tridiagonal factorisation for one step size.
#[derive(Debug, Clone)]
struct StepOperator {
    dt: f64,
    /// Forward sweep `r_j = mass_scaled_j u_j - sub_scaled_j r_{j-1}`.
    mass_scaled: Vec<f64>,
    sub_scaled: Vec<f64>,
    sup_prime: Vec<f64>,
    /// Response of the field to unit surface flux, `M⁻¹ e₀`.
    unit_response: Vec<f64>,
}

impl StepOperator {
    fn new(dt: f64, cell: &[f64]) -> Self {
        let n = cell.len();
        let mut mass = vec![0.0; n];
        let mut sub = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![0.0; n];
        mass[0] = 0.5 * cell[0] / dt;
        diag[0] = mass[0] + 1.0 / cell[0];
        sup[0] = -1.0 / cell[0];
        for j in 1..n {
            mass[j] = 0.5 * (cell[j - 1] + cell[j]) / dt;
            sub[j] = -1.0 / cell[j - 1];
            sup[j] = -1.0 / cell[j];
            diag[j] = mass[j] + 1.0 / cell[j - 1] + 1.0 / cell[j];
        }
        let mut sup_prime = vec![0.0; n];
        let mut inv_denom = vec![0.0; n];
        inv_denom[0] = 1.0 / diag[0];
        sup_prime[0] = sup[0] * inv_denom[0];
        for j in 1..n {
            inv_denom[j] = 1.0 / (diag[j] - sub[j] * sup_prime[j - 1]);
            sup_prime[j] = sup[j] * inv_denom[j];
        }
        let mut op = Self {
            dt,
            mass_scaled: mass.iter().zip(&inv_denom).map(|(m, d)| m * d).collect(),
            sub_scaled: sub.iter().zip(&inv_denom).map(|(b, d)| b * d).collect(),
            sup_prime,
            unit_response: Vec::new(),
        };
        // unit flux enters the surface row only
        let mut e0 = vec![0.0; n];
        e0[0] = inv_denom[0];
        for j in 1..n {
            e0[j] = -op.sub_scaled[j] * e0[j - 1];
        }
        op.back_substitute(&mut e0);
        op.unit_response = e0;
        op
    }

    #[inline]
    fn back_substitute(&self, r: &mut [f64]) {
        for j in (0..r.len() - 1).rev() {
            r[j] -= self.sup_prime[j] * r[j + 1];
        }
    }
}

/// Faradaic current at the surface given the flux-free surface value `base`
/// and the unit response `w0`, as a function of the overpotential.
#[derive(Debug, Clone, Copy)]
struct SurfaceKinetics {
    k0: f64,
    alpha: f64,
    base: f64,
    w0: f64,
}

impl SurfaceKinetics {
    /// Returns `(I_f, dI_f/deta)`.
    #[inline]
    fn current(&self, eta: f64) -> (f64, f64) {
        if self.k0 == 0.0 {
            return (0.0, 0.0);
        }
        // p = eox/(eox + ered) and q = 1/(eox + ered), evaluated without overflow
        let (p, q) = if eta >= 0.0 {
            let e = (-eta).exp();
            let p = 1.0 / (1.0 + e);
            (p, (-(1.0 - self.alpha) * eta).exp() * p)
        } else {
            let e = eta.exp();
            let inv = 1.0 / (1.0 + e);
            (e * inv, (self.alpha * eta).exp() * inv)
        };
        let denom = self.k0 * self.w0 + q;
        let num = self.k0 * (p - self.base);
        let i_f = num / denom;
        let d_num = self.k0 * p * (1.0 - p);
        let d_denom = -q * (p - self.alpha);
        let slope = (d_num * denom - num * d_denom) / (denom * denom);
        (i_f, slope)
    }
}

/// Precomputed solver for one experiment, grid and output time base.
///
/// Parameter-independent work (waveform samples, matrix factorisations) is
/// done once so repeated likelihood evaluations only run the time loop.
#[derive(Debug, Clone)]
pub struct Simulator {
    scales: Scales,
    grid: SolverGrid,
    times: Vec<f64>,
    /// Dimensionless applied potential at each output time.
    e_app: Vec<f64>,
    e_app_initial: f64,
    /// Dimensionless sweep rate at t = 0.
    rate_initial: f64,
    operators: Vec<StepOperator>,
    /// Operator index for each step.
    step_operator: Vec<usize>,
}

impl Simulator {
    /// Solver with the default scales and the experiment's uniform time base.
    pub fn new(config: &ExperimentConfig, grid: &SolverGrid) -> Result<Self> {
        let times = config.time_base(grid.n_time);
        Self::with_times(config, grid, &times, Scales::new(config)?)
    }

    /// Solver reporting the current at `times` (seconds). `grid` must be
    /// expressed in the dimensionless units of `scales`; its `n_time` is
    /// ignored.
    pub fn with_times(
        config: &ExperimentConfig,
        grid: &SolverGrid,
        times: &[f64],
        scales: Scales,
    ) -> Result<Self> {
        config.validate()?;
        let duration = config.duration();
        grid.check_extent(duration / scales.time)?;
        if times.is_empty() {
            return Err(Error::Validation("empty time base".into()));
        }
        if !(times[0] > 0.0) || times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation(
                "output times must be positive and strictly increasing".into(),
            ));
        }
        if times[times.len() - 1] > duration * (1.0 + 1e-9) {
            return Err(Error::Domain(format!(
                "output time {} s beyond the end of the sweep {duration} s",
                times[times.len() - 1]
            )));
        }

        let nodes = grid.nodes();
        let cell: Vec<f64> = nodes.windows(2).map(|w| w[1] - w[0]).collect();

        let waveform: Waveform = config.waveform();
        let e_app = times
            .iter()
            .map(|&t| waveform.potential(t.min(duration)) * scales.potential)
            .collect();

        // first step from t = 0, the rest at the nominal uniform spacing
        let mut operators = vec![StepOperator::new(times[0] / scales.time, &cell)];
        let mut step_operator = vec![0usize; times.len()];
        if times.len() > 1 {
            let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
            if ((dt - times[0]) / dt).abs() > 1e-9 {
                operators.push(StepOperator::new(dt / scales.time, &cell));
                step_operator[1..].fill(1);
            }
        }

        Ok(Self {
            scales,
            grid: *grid,
            times: times.to_vec(),
            e_app,
            e_app_initial: waveform.potential(0.0) * scales.potential,
            rate_initial: waveform.rate(0.0) * scales.potential * scales.time,
            operators,
            step_operator,
        })
    }

    pub fn scales(&self) -> &Scales {
        &self.scales
    }

    pub fn grid(&self) -> &SolverGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Dimensionless total current at every output time.
    pub fn currents(&self, params: &DimensionlessParams) -> Result<Vec<f64>> {
        let mut out = [Vec::with_capacity(self.times.len())];
        let [status] = self.march::<1>([params], &mut out, None);
        status?;
        let [out] = out;
        Ok(out)
    }

    /// Dimensionless currents for several parameter sets. Sets are advanced
    /// together through the shared operator, which is several times faster
    /// than separate runs.
    pub fn currents_many(&self, params: &[DimensionlessParams]) -> Vec<Result<Vec<f64>>> {
        let mut results = Vec::with_capacity(params.len());
        for chunk in params.chunks(BATCH_LANES) {
            match chunk.len() {
                1 => self.march_chunk::<1>(chunk, &mut results),
                2 => self.march_chunk::<2>(chunk, &mut results),
                3 | 4 => self.march_chunk::<4>(chunk, &mut results),
                _ => self.march_chunk::<BATCH_LANES>(chunk, &mut results),
            }
        }
        results
    }

    fn march_chunk<const L: usize>(
        &self,
        chunk: &[DimensionlessParams],
        results: &mut Vec<Result<Vec<f64>>>,
    ) {
        // spare lanes repeat the last set and are dropped
        let lanes: [&DimensionlessParams; L] =
            std::array::from_fn(|l| &chunk[l.min(chunk.len() - 1)]);
        let mut out: [Vec<f64>; L] = std::array::from_fn(|_| Vec::with_capacity(self.times.len()));
        let status = self.march::<L>(lanes, &mut out, None);
        for (res, currents) in status.into_iter().zip(out).take(chunk.len()) {
            results.push(res.map(|_| currents));
        }
    }

    /// Total current in amperes.
    pub fn currents_amps(&self, params: &ModelParams) -> Result<Vec<f64>> {
        let p = nondimensionalise_with(params, &self.scales);
        let mut out = self.currents(&p)?;
        for v in &mut out {
            *v *= self.scales.current;
        }
        Ok(out)
    }

    /// Runs the time loop, pushing the dimensionless current for each step
    /// into `out` and handing the concentration field `c_A / c_bulk` (without
    /// the fixed outer node) to `observe` after every step.
    pub fn run<F>(
        &self,
        params: &DimensionlessParams,
        out: &mut Vec<f64>,
        mut observe: F,
    ) -> Result<()>
    where
        F: FnMut(usize, &[f64]),
    {
        let mut lanes = [std::mem::take(out)];
        let [status] = self.march::<1>([params], &mut lanes, Some(&mut observe));
        let [filled] = lanes;
        *out = filled;
        status
    }

    /// Advances `L` independent parameter sets. `observe` sees lane 0.
    fn march<const L: usize>(
        &self,
        params: [&DimensionlessParams; L],
        out: &mut [Vec<f64>; L],
        mut observe: Option<&mut dyn FnMut(usize, &[f64])>,
    ) -> [Result<()>; L] {
        let n = self.grid.n_space;
        // Depletion 1 - c_A / c_bulk, zero at the outer boundary. It is held
        // as `work - flux * response` and only assembled inside the next
        // forward sweep.
        let mut work = vec![[0.0; L]; n];
        let mut flux = [0.0; L];
        let mut response: &[f64] = &self.operators[0].unit_response;
        let mut conc = if observe.is_some() {
            vec![1.0; n]
        } else {
            Vec::new()
        };
        let mut status: [Result<()>; L] = std::array::from_fn(|_| Ok(()));
        // the double layer starts charging at the sweep rate, so there is no
        // RC transient at t = 0
        let mut i_prev: [f64; L] = std::array::from_fn(|l| params[l].cdl * self.rate_initial);
        let mut e_eff_prev: [f64; L] =
            std::array::from_fn(|l| self.e_app_initial - i_prev[l] * params[l].ru);

        for (step, &e_app) in self.e_app.iter().enumerate() {
            let op = &self.operators[self.step_operator[step]];
            let mut prev = [0.0; L];
            for j in 0..n {
                let (m, c, r) = (op.mass_scaled[j], op.sub_scaled[j], response[j]);
                let w = &mut work[j];
                for l in 0..L {
                    let u = w[l] - flux[l] * r;
                    prev[l] = m * u - c * prev[l];
                    w[l] = prev[l];
                }
            }
            for j in (0..n - 1).rev() {
                let sp = op.sup_prime[j];
                let next = work[j + 1];
                let w = &mut work[j];
                for l in 0..L {
                    w[l] -= sp * next[l];
                }
            }

            for l in 0..L {
                let p = params[l];
                if status[l].is_err() {
                    flux[l] = 0.0;
                    out[l].push(0.0);
                    continue;
                }
                let kinetics = SurfaceKinetics {
                    k0: p.k0,
                    alpha: p.alpha,
                    base: 1.0 - work[0][l],
                    w0: op.unit_response[0],
                };
                let charging = p.cdl / op.dt;
                let solved = if p.ru == 0.0 {
                    let (i_f, _) = kinetics.current(e_app - p.e0);
                    Some((i_f + charging * (e_app - e_eff_prev[l]), i_f))
                } else {
                    solve_total_current(
                        &kinetics,
                        e_app,
                        p.e0,
                        p.ru,
                        charging,
                        e_eff_prev[l],
                        i_prev[l],
                    )
                };
                match solved {
                    Some((i_tot, i_f)) if i_tot.is_finite() => {
                        flux[l] = i_f;
                        e_eff_prev[l] = e_app - i_tot * p.ru;
                        i_prev[l] = i_tot;
                        out[l].push(i_tot);
                    }
                    other => {
                        let message = if other.is_none() {
                            format!(
                                "total-current iteration failed at t = {} s",
                                self.times[step]
                            )
                        } else {
                            "non-finite current".to_string()
                        };
                        status[l] = Err(Error::SolverDivergence { step, message });
                        flux[l] = 0.0;
                        out[l].push(0.0);
                    }
                }
            }
            response = &op.unit_response;

            if let Some(f) = observe.as_mut() {
                for j in 0..n {
                    conc[j] = 1.0 - (work[j][0] - flux[0] * response[j]);
                }
                f(step, &conc);
            }
        }
        status
    }
}

/// Solves `I = I_f(E_app - I ru - E0) + charging (E_app - I ru - E_prev)` for
/// the total current. Returns `(I_tot, I_f)`.
fn solve_total_current(
    kinetics: &SurfaceKinetics,
    e_app: f64,
    e0: f64,
    ru: f64,
    charging: f64,
    e_eff_prev: f64,
    guess: f64,
) -> Option<(f64, f64)> {
    let residual = |i: f64| {
        let e_eff = e_app - i * ru;
        let (i_f, slope) = kinetics.current(e_eff - e0);
        let g = i - i_f - charging * (e_eff - e_eff_prev);
        (g, 1.0 + ru * slope + charging * ru, i_f)
    };
    let mut i = guess;
    let (mut g, mut dg, _) = residual(i);
    for _ in 0..NEWTON_MAX_ITER {
        if !(g.is_finite() && dg.is_finite()) {
            return None;
        }
        let mut step = -g / dg;
        let mut next = residual(i + step);
        // halve until the residual decreases
        let mut halvings = 0;
        while !(next.0.abs() <= g.abs()) && halvings < 40 {
            step *= 0.5;
            next = residual(i + step);
            halvings += 1;
        }
        i += step;
        let i_f;
        (g, dg, i_f) = next;
        if step.abs() <= NEWTON_RTOL * i.abs() + NEWTON_ATOL {
            return Some((i, i_f));
        }
    }
    None
}

/// Simulates the total current on the experiment's uniform time base
/// (`grid.n_time` points on `(0, 2 t_reverse]`), in amperes.
pub fn simulate(
    params: &ModelParams,
    config: &ExperimentConfig,
    grid: &SolverGrid,
) -> Result<CurrentTrace> {
    let sim = Simulator::new(config, grid)?;
    let currents = sim.currents_amps(params)?;
    CurrentTrace::new(sim.times().to_vec(), currents)
}

/// Result of re-running a simulation on a doubled grid.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub coarse: SolverGrid,
    pub fine: SolverGrid,
    /// Largest `|I_coarse - I_fine|` at shared times, divided by the peak
    /// `|I_fine|`; zero when both traces vanish.
    pub max_relative_difference: f64,
}

/// Simulates on `grid` and on [`SolverGrid::refined`] and compares the
/// currents at the coarse output times.
pub fn refine_and_compare(
    params: &ModelParams,
    config: &ExperimentConfig,
    grid: &SolverGrid,
) -> Result<ConvergenceReport> {
    let fine_grid = grid.refined()?;
    let coarse = simulate(params, config, grid)?;
    let fine = simulate(params, config, &fine_grid)?;
    let peak = fine.currents.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let worst = coarse
        .currents
        .iter()
        .zip(fine.currents.iter().skip(1).step_by(2))
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let max_relative_difference = if peak == 0.0 { worst } else { worst / peak };
    Ok(ConvergenceReport {
        coarse: *grid,
        fine: fine_grid,
        max_relative_difference,
    })
}

//! CMA-ES with increasing-population restarts, minimising inside the unit box.
//!
//! Points outside `[0, 1]^n` are evaluated at their projection onto the box
//! plus a quadratic penalty on the distance, so the returned minimiser is
//! always feasible. Each generation's population is handed to the objective
//! as one batch; candidates are drawn sequentially from one seeded stream,
//! so results do not depend on how the batch is evaluated.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CmaesSettings {
    /// Initial population; `None` means `4 + floor(3 ln n)`.
    pub population: Option<usize>,
    /// Restarts after the first run, each doubling the population.
    pub max_restarts: usize,
    /// Initial step size as a fraction of the box width.
    pub initial_step: f64,
    pub max_evaluations: usize,
    pub seed: u64,
    /// Stop a run when the search distribution is narrower than this.
    pub tol_x: f64,
    /// Stop a run when recent best values agree to within
    /// `tol_fun * |f| + tol_fun_abs`.
    pub tol_fun: f64,
    pub tol_fun_abs: f64,
}

impl Default for CmaesSettings {
    fn default() -> Self {
        Self {
            population: None,
            max_restarts: 3,
            initial_step: 0.25,
            max_evaluations: 10_000,
            seed: 0,
            tol_x: 1e-11,
            tol_fun: 1e-10,
            tol_fun_abs: 1e-15,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaesResult {
    pub best_x: Vec<f64>,
    pub best_f: f64,
    pub evaluations: usize,
    pub runs: usize,
}

/// Two runs whose best values agree this closely found the same basin.
const SAME_OPTIMUM: f64 = 1e-6;
const PENALTY: f64 = 1e2;

fn project(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

/// Minimises `f` over `[0, 1]^dim`. `f` returns `None` where it cannot be
/// evaluated. Returns `None` if no evaluation succeeded within the budget.
pub fn minimize_unit_box<F>(
    f: F,
    dim: usize,
    start: Option<&[f64]>,
    settings: &CmaesSettings,
) -> Option<CmaesResult>
where
    F: Fn(&[f64]) -> Option<f64> + Sync,
{
    let batch = |xs: &[Vec<f64>]| xs.par_iter().map(|x| f(x)).collect::<Vec<_>>();
    minimize_unit_box_batch(batch, dim, start, settings)
}

/// As [`minimize_unit_box`] with an objective that scores a whole
/// population at once.
pub fn minimize_unit_box_batch<F>(
    f: F,
    dim: usize,
    start: Option<&[f64]>,
    settings: &CmaesSettings,
) -> Option<CmaesResult>
where
    F: Fn(&[Vec<f64>]) -> Vec<Option<f64>>,
{
    let objective = |xs: &[Vec<f64>]| -> Vec<f64> {
        let inside: Vec<Vec<f64>> = xs.iter().map(|x| project(x)).collect();
        f(&inside)
            .into_iter()
            .zip(xs.iter().zip(&inside))
            .map(|(value, (x, p))| match value {
                Some(v) if v.is_finite() => {
                    let dist2: f64 = x.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
                    v + PENALTY * dist2 * v.abs().max(f64::MIN_POSITIVE)
                }
                _ => f64::INFINITY,
            })
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let base_pop = settings
        .population
        .unwrap_or(4 + (3.0 * (dim as f64).ln()).floor() as usize)
        .max(2);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut evaluations = 0;
    let mut runs = 0;

    for restart in 0..=settings.max_restarts {
        if evaluations >= settings.max_evaluations {
            break;
        }
        let mean: Vec<f64> = match (restart, start) {
            (0, Some(x0)) => x0.to_vec(),
            (0, None) => vec![0.5; dim],
            _ => (0..dim).map(|_| rng.random::<f64>()).collect(),
        };
        let lambda = base_pop << restart;
        let budget = settings.max_evaluations - evaluations;
        let run = run_once(&objective, mean, lambda, budget, settings, &mut rng);
        evaluations += run.evaluations;
        runs += 1;

        let previous = best.as_ref().map(|b| b.1);
        if run.best_f.is_finite() && previous.is_none_or(|p| run.best_f < p) {
            best = Some((project(&run.best_x), run.best_f));
        }
        if let Some(p) = previous {
            let scale = p.abs().max(run.best_f.abs()).max(f64::MIN_POSITIVE);
            if (run.best_f - p).abs() <= SAME_OPTIMUM * scale + 10.0 * settings.tol_fun_abs {
                break;
            }
        }
    }

    best.map(|(best_x, best_f)| CmaesResult {
        best_x,
        best_f,
        evaluations,
        runs,
    })
}

struct RunOutcome {
    best_x: Vec<f64>,
    best_f: f64,
    evaluations: usize,
}

fn run_once<F>(
    objective: &F,
    mean: Vec<f64>,
    lambda: usize,
    budget: usize,
    settings: &CmaesSettings,
    rng: &mut ChaCha8Rng,
) -> RunOutcome
where
    F: Fn(&[Vec<f64>]) -> Vec<f64>,
{
    let n = mean.len();
    let nf = n as f64;
    let mu = lambda / 2;
    let raw: Vec<f64> = (0..mu)
        .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - ((i + 1) as f64).ln())
        .collect();
    let wsum: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / wsum).collect();
    let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

    let cs = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
    let ds = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
    let cc = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
    let c1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
    let cmu = (1.0 - c1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
    let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
    let history_len = 10 + (30.0 * nf / lambda as f64).ceil() as usize;

    let mut xmean = DVector::from_vec(mean);
    let mut sigma = settings.initial_step;
    let mut pc = DVector::zeros(n);
    let mut ps = DVector::zeros(n);
    let mut cov = DMatrix::identity(n, n);
    let mut basis = DMatrix::identity(n, n);
    let mut axes = DVector::from_element(n, 1.0);
    let mut inv_sqrt_cov = DMatrix::identity(n, n);

    let mut best_x = xmean.as_slice().to_vec();
    let mut best_f = f64::INFINITY;
    let mut evaluations = 0;
    let mut history: Vec<f64> = Vec::new();
    let mut generation = 0usize;

    while evaluations + lambda <= budget {
        generation += 1;
        let steps: Vec<DVector<f64>> = (0..lambda)
            .map(|_| {
                let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                &basis * z.component_mul(&axes)
            })
            .collect();
        let candidates: Vec<DVector<f64>> = steps.iter().map(|y| &xmean + y * sigma).collect();
        let points: Vec<Vec<f64>> = candidates.iter().map(|x| x.as_slice().to_vec()).collect();
        let values = objective(&points);
        evaluations += lambda;

        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        if values[order[0]] < best_f {
            best_f = values[order[0]];
            best_x = candidates[order[0]].as_slice().to_vec();
        }
        if !values[order[0]].is_finite() {
            // nothing evaluable this generation; widen and retry
            sigma *= 2.0;
            if sigma > 10.0 {
                break;
            }
            continue;
        }

        let y_w = order
            .iter()
            .take(mu)
            .zip(&weights)
            .fold(DVector::zeros(n), |acc, (&i, w)| acc + &steps[i] * *w);
        xmean += &y_w * sigma;

        ps = &ps * (1.0 - cs) + (&inv_sqrt_cov * &y_w) * (cs * (2.0 - cs) * mu_eff).sqrt();
        let ps_norm = ps.norm();
        let hsig = ps_norm / (1.0 - (1.0 - cs).powi(2 * generation as i32)).sqrt() / chi_n
            < 1.4 + 2.0 / (nf + 1.0);
        let hsig_f = if hsig { 1.0 } else { 0.0 };
        pc = &pc * (1.0 - cc) + &y_w * (hsig_f * (cc * (2.0 - cc) * mu_eff).sqrt());

        let mut rank_mu = DMatrix::zeros(n, n);
        for (&i, w) in order.iter().take(mu).zip(&weights) {
            rank_mu += &steps[i] * steps[i].transpose() * *w;
        }
        cov = &cov * (1.0 - c1 - cmu)
            + (&pc * pc.transpose() + &cov * ((1.0 - hsig_f) * cc * (2.0 - cc))) * c1
            + rank_mu * cmu;
        cov = (&cov + cov.transpose()) * 0.5;
        sigma *= ((cs / ds) * (ps_norm / chi_n - 1.0)).exp();

        let eig = SymmetricEigen::new(cov.clone());
        let min_eig = eig.eigenvalues.min();
        let max_eig = eig.eigenvalues.max();
        if !(min_eig > 0.0) || max_eig / min_eig > 1e14 {
            break;
        }
        basis = eig.eigenvectors;
        axes = eig.eigenvalues.map(f64::sqrt);
        inv_sqrt_cov = &basis * DMatrix::from_diagonal(&axes.map(|d| 1.0 / d)) * basis.transpose();

        // termination
        let spread = sigma * cov.diagonal().iter().fold(0.0f64, |m, v| m.max(v.sqrt()));
        if spread < settings.tol_x {
            break;
        }
        history.push(values[order[0]]);
        if history.len() >= history_len {
            let recent = &history[history.len() - history_len..];
            let hi = recent
                .iter()
                .chain(values.iter().filter(|v| v.is_finite()))
                .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lo = recent.iter().fold(f64::INFINITY, |m, &v| m.min(v));
            if hi - lo <= settings.tol_fun * lo.abs() + settings.tol_fun_abs {
                break;
            }
        }
    }

    RunOutcome {
        best_x,
        best_f,
        evaluations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_shifted_sphere() {
        let target = [0.3, 0.71, 0.5, 0.05, 0.9];
        let f = |x: &[f64]| Some(x.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum());
        let r = minimize_unit_box(f, 5, None, &CmaesSettings::default()).unwrap();
        for (a, b) in r.best_x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-6, "{:?}", r.best_x);
        }
        assert!(r.evaluations <= 10_000);
    }

    #[test]
    fn ill_conditioned_rosenbrock() {
        // Rosenbrock mapped into the box, minimum at u = 0.75
        let f = |u: &[f64]| {
            let x: Vec<f64> = u.iter().map(|v| 4.0 * v - 2.0).collect();
            Some(
                (0..x.len() - 1)
                    .map(|i| 100.0 * (x[i + 1] - x[i] * x[i]).powi(2) + (1.0 - x[i]).powi(2))
                    .sum(),
            )
        };
        let r = minimize_unit_box(f, 4, None, &CmaesSettings::default()).unwrap();
        assert!(r.best_f < 1e-10, "{r:?}");
    }

    #[test]
    fn optimum_on_the_boundary_is_feasible() {
        let f = |x: &[f64]| Some(x.iter().map(|v| (v + 1.0).powi(2)).sum());
        let r = minimize_unit_box(f, 3, None, &CmaesSettings::default()).unwrap();
        assert!(r.best_x.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(r.best_x.iter().all(|v| *v < 1e-6));
    }

    #[test]
    fn deterministic_for_a_seed() {
        let f = |x: &[f64]| Some((x[0] - 0.2).powi(2) + 3.0 * (x[1] - 0.4).powi(2));
        let s = CmaesSettings {
            seed: 42,
            ..Default::default()
        };
        let a = minimize_unit_box(f, 2, None, &s).unwrap();
        let b = minimize_unit_box(f, 2, None, &s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nothing_evaluable() {
        let f = |_: &[f64]| None;
        let s = CmaesSettings {
            max_evaluations: 200,
            ..Default::default()
        };
        assert!(minimize_unit_box(f, 2, None, &s).is_none());
    }
}

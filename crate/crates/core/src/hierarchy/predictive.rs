use serde::Serialize;

use super::niw::HyperSample;
use crate::error::{Error, Result};
use crate::model::PARAM_NAMES;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Equal-weight mixture of `N(mu_m[k], Sigma_m[k, k])` over hyper draws,
/// evaluated at `points`.
pub fn posterior_predictive_density(
    hyper: &[HyperSample],
    k: usize,
    points: &[f64],
) -> Result<Vec<f64>> {
    if hyper.is_empty() {
        return Err(Error::Domain(
            "posterior predictive needs at least one hyper sample".into(),
        ));
    }
    if k >= hyper[0].mu.len() {
        return Err(Error::Domain(format!("coordinate {k} out of range")));
    }
    let components: Vec<(f64, f64)> = hyper
        .iter()
        .map(|h| (h.mu[k], h.sigma_mat[(k, k)].sqrt()))
        .collect();
    let m = components.len() as f64;
    Ok(points
        .iter()
        .map(|&x| {
            components
                .iter()
                .map(|&(mu, sd)| {
                    let z = (x - mu) / sd;
                    INV_SQRT_2PI / sd * (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                / m
        })
        .collect())
}

/// Evenly spaced points covering every mixture component to `width`
/// standard deviations.
pub fn predictive_grid(
    hyper: &[HyperSample],
    k: usize,
    n_points: usize,
    width: f64,
) -> Result<Vec<f64>> {
    if hyper.is_empty() || n_points < 2 {
        return Err(Error::Domain(
            "predictive grid needs hyper samples and at least 2 points".into(),
        ));
    }
    let (lo, hi) = hyper
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), h| {
            let sd = h.sigma_mat[(k, k)].sqrt();
            (lo.min(h.mu[k] - width * sd), hi.max(h.mu[k] + width * sd))
        });
    let step = (hi - lo) / (n_points - 1) as f64;
    Ok((0..n_points).map(|i| lo + step * i as f64).collect())
}

/// Pearson correlation; `None` when either series has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseCorrelation {
    pub first: usize,
    pub second: usize,
    pub names: (String, String),
    /// Undefined when either coordinate is constant.
    pub correlation: Option<f64>,
    pub first_values: Vec<f64>,
    pub second_values: Vec<f64>,
}

/// Every unordered pair of hyper-mean coordinates with its correlation and
/// scatter columns.
pub fn pairwise_mu_table(hyper: &[HyperSample]) -> Result<Vec<PairwiseCorrelation>> {
    if hyper.len() < 2 {
        return Err(Error::Domain(
            "pairwise correlations need at least 2 hyper samples".into(),
        ));
    }
    let d = hyper[0].mu.len();
    let columns: Vec<Vec<f64>> = (0..d)
        .map(|k| hyper.iter().map(|h| h.mu[k]).collect())
        .collect();
    let name = |k: usize| {
        PARAM_NAMES
            .get(k)
            .map_or_else(|| format!("x{k}"), |s| s.to_string())
    };
    let mut out = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            out.push(PairwiseCorrelation {
                first: i,
                second: j,
                names: (name(i), name(j)),
                correlation: pearson(&columns[i], &columns[j]),
                first_values: columns[i].clone(),
                second_values: columns[j].clone(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
        x.windows(2)
            .zip(y.windows(2))
            .map(|(a, b)| 0.5 * (a[1] - a[0]) * (b[0] + b[1]))
            .sum()
    }

    fn random_hyper(n: usize, seed: u64) -> Vec<HyperSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mu = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
                let var = DVector::from_fn(5, |_, _| rng.random_range(0.01..0.5));
                HyperSample {
                    mu,
                    sigma_mat: DMatrix::from_diagonal(&var),
                }
            })
            .collect()
    }

    #[test]
    fn single_sample_is_one_gaussian() {
        let h = random_hyper(1, 1);
        let x = [-0.3, 0.0, 0.7];
        let d = posterior_predictive_density(&h, 2, &x).unwrap();
        let (mu, var) = (h[0].mu[2], h[0].sigma_mat[(2, 2)]);
        for (xi, di) in x.iter().zip(&d) {
            let want = (-(xi - mu).powi(2) / (2.0 * var)).exp()
                / (2.0 * std::f64::consts::PI * var).sqrt();
            assert!((di - want).abs() < 1e-14);
        }
    }

    #[test]
    fn mixture_integrates_to_one_and_has_the_right_mean() {
        let h = random_hyper(200, 2);
        for k in 0..5 {
            let x = predictive_grid(&h, k, 4001, 10.0).unwrap();
            let d = posterior_predictive_density(&h, k, &x).unwrap();
            assert!((trapezoid(&x, &d) - 1.0).abs() < 1e-3);
            let xd: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a * b).collect();
            let mean_mu = h.iter().map(|s| s.mu[k]).sum::<f64>() / h.len() as f64;
            assert!((trapezoid(&x, &xd) - mean_mu).abs() < 1e-4);
        }
    }

    #[test]
    fn empty_samples() {
        assert!(posterior_predictive_density(&[], 0, &[0.0]).is_err());
        assert!(pairwise_mu_table(&random_hyper(1, 0)).is_err());
    }

    #[test]
    fn pairwise_table() {
        let mut h = random_hyper(50, 3);
        for s in h.iter_mut() {
            s.mu[1] = 2.0 * s.mu[0] + 3.0;
            s.mu[4] = 7.0;
        }
        let t = pairwise_mu_table(&h).unwrap();
        assert_eq!(t.len(), 10);
        let p01 = t.iter().find(|p| p.first == 0 && p.second == 1).unwrap();
        assert!((p01.correlation.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(p01.names, ("e0".to_string(), "k0".to_string()));
        assert!(t
            .iter()
            .filter(|p| p.second == 4)
            .all(|p| p.correlation.is_none()));
        let col = &p01.first_values;
        assert_eq!(pearson(col, col), Some(1.0));
    }
}

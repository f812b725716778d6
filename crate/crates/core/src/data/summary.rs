use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateSummary {
    pub mean: f64,
    /// Unbiased (n - 1) standard deviation.
    pub sd: f64,
    pub p2_5: f64,
    pub p50: f64,
    pub p97_5: f64,
}

/// Per-coordinate mean, SD and 2.5/50/97.5 percentiles (linear
/// interpolation between order statistics).
pub fn summarize<S: AsRef<[f64]>>(samples: &[S]) -> Result<Vec<CoordinateSummary>> {
    if samples.len() < 2 {
        return Err(Error::Domain("summaries need at least 2 samples".into()));
    }
    let dim = samples[0].as_ref().len();
    if samples.iter().any(|s| s.as_ref().len() != dim) {
        return Err(Error::Domain("samples of unequal length".into()));
    }
    let n = samples.len() as f64;
    Ok((0..dim)
        .map(|k| {
            let mut column: Vec<f64> = samples.iter().map(|s| s.as_ref()[k]).collect();
            let mean = column.iter().sum::<f64>() / n;
            let var = column.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            column.sort_by(f64::total_cmp);
            CoordinateSummary {
                mean,
                sd: var.sqrt(),
                p2_5: percentile(&column, 0.025),
                p50: percentile(&column, 0.5),
                p97_5: percentile(&column, 0.975),
            }
        })
        .collect())
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

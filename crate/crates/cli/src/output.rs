use std::io::{self, Write};

use acvolt::data::CoordinateSummary;
use acvolt::hierarchy::{HyperSample, PairwiseCorrelation};
use acvolt::model::PARAM_NAMES;

pub const SAMPLE_HEADER: &str = "e0,k0,alpha,cdl,ru,sigma,log_posterior";

/// 17 significant digits, enough to round-trip any f64.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn row(w: &mut dyn Write, values: impl IntoIterator<Item = f64>) -> io::Result<()> {
    let cells: Vec<String> = values.into_iter().map(num).collect();
    writeln!(w, "{}", cells.join(","))
}

/// One row per retained sample; `samples` rows are `(e0, k0, alpha, cdl,
/// ru, sigma)`.
pub fn write_samples(
    w: &mut dyn Write,
    samples: &[[f64; 6]],
    log_posteriors: &[f64],
) -> io::Result<()> {
    writeln!(w, "{SAMPLE_HEADER}")?;
    for (s, lp) in samples.iter().zip(log_posteriors) {
        row(w, s.iter().copied().chain([*lp]))?;
    }
    Ok(())
}

pub fn write_summary(
    w: &mut dyn Write,
    names: &[String],
    summary: &[CoordinateSummary],
) -> io::Result<()> {
    writeln!(w, "parameter,mean,sd,p2_5,p50,p97_5")?;
    for (name, s) in names.iter().zip(summary) {
        write!(w, "{name},")?;
        row(w, [s.mean, s.sd, s.p2_5, s.p50, s.p97_5])?;
    }
    Ok(())
}

pub fn hyper_header() -> Vec<String> {
    let d = PARAM_NAMES.len();
    let mut cols: Vec<String> = PARAM_NAMES.iter().map(|n| format!("mu_{n}")).collect();
    cols.extend(PARAM_NAMES.iter().map(|n| format!("var_{n}")));
    for i in 0..d {
        for j in i + 1..d {
            cols.push(format!("cov_{}_{}", PARAM_NAMES[i], PARAM_NAMES[j]));
        }
    }
    cols
}

/// Flattens a draw in [`hyper_header`] order.
pub fn hyper_row(h: &HyperSample) -> Vec<f64> {
    let d = h.mu.len();
    let mut out: Vec<f64> = h.mu.iter().copied().collect();
    out.extend((0..d).map(|k| h.sigma_mat[(k, k)]));
    for i in 0..d {
        for j in i + 1..d {
            out.push(h.sigma_mat[(i, j)]);
        }
    }
    out
}

pub fn write_hyper(w: &mut dyn Write, hyper: &[HyperSample]) -> io::Result<()> {
    writeln!(w, "{}", hyper_header().join(","))?;
    for h in hyper {
        row(w, hyper_row(h))?;
    }
    Ok(())
}

pub fn write_columns(w: &mut dyn Write, header: &str, columns: &[&[f64]]) -> io::Result<()> {
    writeln!(w, "{header}")?;
    let n = columns.first().map_or(0, |c| c.len());
    for i in 0..n {
        row(w, columns.iter().map(|c| c[i]))?;
    }
    Ok(())
}

/// Correlation table; an undefined correlation is written as `undefined`.
pub fn write_pairwise(w: &mut dyn Write, table: &[PairwiseCorrelation]) -> io::Result<()> {
    writeln!(w, "first,second,correlation")?;
    for p in table {
        let r = p.correlation.map_or_else(|| "undefined".to_string(), num);
        writeln!(w, "mu_{},mu_{},{r}", p.names.0, p.names.1)?;
    }
    Ok(())
}

//! Current traces, CSV IO, decimation, synthetic datasets and summaries.

mod summary;
mod synthetic;

pub use summary::{summarize, CoordinateSummary};
pub use synthetic::{generate_synthetic, SyntheticDataset, SyntheticSpec};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Relative tolerance (of the record span) for uniform sample spacing.
pub const SPACING_TOLERANCE: f64 = 1e-9;

/// A uniformly sampled total-current record.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentTrace {
    /// s, strictly increasing and uniformly spaced
    pub times: Vec<f64>,
    /// A
    pub currents: Vec<f64>,
}

impl CurrentTrace {
    pub fn new(times: Vec<f64>, currents: Vec<f64>) -> Result<Self> {
        let trace = Self { times, currents };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if n != self.currents.len() {
            return Err(Error::Validation(format!(
                "{n} times but {} currents",
                self.currents.len()
            )));
        }
        if n < 2 {
            return Err(Error::Validation("a trace needs at least 2 points".into()));
        }
        if let Some(i) = self
            .times
            .iter()
            .chain(&self.currents)
            .position(|v| !v.is_finite())
        {
            return Err(Error::Validation(format!(
                "non-finite value in row {}",
                i % n + 1
            )));
        }
        if let Some(i) = self.times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Validation(format!(
                "times not strictly increasing at row {}",
                i + 2
            )));
        }
        let span = self.times[n - 1] - self.times[0];
        let dt = span / (n - 1) as f64;
        if let Some(i) = self
            .times
            .windows(2)
            .position(|w| ((w[1] - w[0]) - dt).abs() > SPACING_TOLERANCE * span)
        {
            return Err(Error::Validation(format!(
                "non-uniform time spacing at row {}",
                i + 2
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn peak_abs_current(&self) -> f64 {
        self.currents.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            times: self.times.clone(),
            currents: self.currents.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Reads a two-column CSV (`time, current` with a header row). With
/// `sign_flip` every current is negated.
pub fn load_trace(path: &Path, sign_flip: bool) -> Result<CurrentTrace> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Validation(format!("{display}: {other:?}")),
        })?;
    let mut times = Vec::new();
    let mut currents = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: display.clone(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            return Err(Error::Parse {
                path: display.clone(),
                line,
                message: format!("expected 2 columns, found {}", record.len()),
            });
        }
        let parse = |field: &str| {
            field.parse::<f64>().map_err(|e| Error::Parse {
                path: display.clone(),
                line,
                message: format!("{field:?}: {e}"),
            })
        };
        times.push(parse(&record[0])?);
        let current = parse(&record[1])?;
        currents.push(if sign_flip { -current } else { current });
    }
    CurrentTrace::new(times, currents).map_err(|e| Error::Validation(format!("{display}: {e}")))
}

/// Writes `t_seconds,current_amps` with 17 significant digits.
pub fn write_trace(path: &Path, trace: &CurrentTrace) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "t_seconds,current_amps")?;
    for (t, i) in trace.times.iter().zip(&trace.currents) {
        writeln!(out, "{t:.16e},{i:.16e}")?;
    }
    out.flush()?;
    Ok(())
}

/// Averages consecutive non-overlapping blocks of `window` points (time and
/// current alike). A trailing partial block is dropped.
pub fn decimate_moving_average(trace: &CurrentTrace, window: usize) -> Result<CurrentTrace> {
    if window == 0 {
        return Err(Error::Domain("decimation window must be >= 1".into()));
    }
    if trace.len() < window {
        return Err(Error::Domain(format!(
            "trace of {} points is shorter than the window {window}",
            trace.len()
        )));
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let times: Vec<f64> = trace.times.chunks_exact(window).map(mean).collect();
    let currents: Vec<f64> = trace.currents.chunks_exact(window).map(mean).collect();
    if times.len() < 2 {
        return Err(Error::Domain(format!(
            "window {window} leaves fewer than 2 points"
        )));
    }
    Ok(CurrentTrace { times, currents })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn linear(n: usize) -> CurrentTrace {
        let times: Vec<f64> = (0..n).map(|i| 0.001 * (i + 1) as f64).collect();
        let currents = times.iter().map(|t| 3.0 * t - 1.0).collect();
        CurrentTrace::new(times, currents).unwrap()
    }

    #[test]
    fn rejects_bad_traces() {
        assert!(CurrentTrace::new(vec![0.0], vec![1.0]).is_err());
        assert!(CurrentTrace::new(vec![0.0, 1.0], vec![1.0, f64::NAN]).is_err());
        assert!(CurrentTrace::new(vec![1.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(CurrentTrace::new(vec![0.0, 1.0, 3.0], vec![1.0; 3]).is_err());
        assert!(CurrentTrace::new(vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn constant_trace_decimates_to_constant() {
        let mut t = linear(100);
        t.currents.fill(2.5);
        let d = decimate_moving_average(&t, 21).unwrap();
        assert_eq!(d.len(), 100 / 21);
        assert!(d.currents.iter().all(|&c| (c - 2.5).abs() < 1e-15));
    }

    #[test]
    fn linear_trace_maps_to_block_midpoints() {
        let t = linear(210);
        let d = decimate_moving_average(&t, 21).unwrap();
        assert_eq!(d.len(), 10);
        for (b, (time, cur)) in d.times.iter().zip(&d.currents).enumerate() {
            let mid = &t.times[b * 21 + 10];
            assert!((time - mid).abs() < 1e-15);
            assert!((cur - (3.0 * mid - 1.0)).abs() < 1e-14);
        }
        d.validate().unwrap();
    }

    #[test]
    fn paper_scale_decimation() {
        let n = 525_000;
        let times: Vec<f64> = (1..=n).map(|i| i as f64 * 1e-6).collect();
        let trace = CurrentTrace::new(times, vec![0.0; n]).unwrap();
        assert_eq!(decimate_moving_average(&trace, 21).unwrap().len(), 25_000);
    }

    #[test]
    fn short_trace_is_domain_error() {
        let t = linear(20);
        assert!(matches!(
            decimate_moving_average(&t, 21),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            decimate_moving_average(&t, 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let trace = CurrentTrace::new(
            vec![0.1, 0.2, 0.30000000000000004],
            vec![1.234_567_890_123_456_8e-5, -std::f64::consts::PI * 1e-7, 0.0],
        )
        .unwrap();
        write_trace(&path, &trace).unwrap();
        let back = load_trace(&path, false).unwrap();
        assert_eq!(back, trace);
        let flipped = load_trace(&path, true).unwrap();
        assert_eq!(flipped.currents[1], -trace.currents[1]);
    }

    #[test]
    fn load_reports_line_numbers_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "t,i\n0.1,1.0\n0.2,abc\n").unwrap();
        match load_trace(&path, false) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let nan = dir.path().join("nan.csv");
        std::fs::write(&nan, "t,i\n0.1,1.0\n0.2,NaN\n").unwrap();
        assert!(matches!(load_trace(&nan, false), Err(Error::Validation(_))));
        let backwards = dir.path().join("back.csv");
        std::fs::write(&backwards, "t,i\n0.2,1.0\n0.1,1.0\n").unwrap();
        assert!(matches!(
            load_trace(&backwards, false),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            load_trace(&dir.path().join("missing.csv"), false),
            Err(Error::Io(_))
        ));
    }

    proptest! {
        #[test]
        fn decimation_commutes_with_scaling_and_shift(
            scale in -1e3f64..1e3,
            shift in 0.0f64..10.0,
            n in 42usize..300,
            window in 1usize..21,
        ) {
            let base = linear(n);
            let d = decimate_moving_average(&base, window).unwrap();
            let scaled = decimate_moving_average(&base.scaled(scale), window).unwrap();
            for (a, b) in d.currents.iter().zip(&scaled.currents) {
                prop_assert!((a * scale - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
            let shifted = CurrentTrace {
                times: base.times.iter().map(|t| t + shift).collect(),
                currents: base.currents.clone(),
            };
            let ds = decimate_moving_average(&shifted, window).unwrap();
            for (a, b) in d.times.iter().zip(&ds.times) {
                prop_assert!((a + shift - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
            prop_assert_eq!(&ds.currents, &d.currents);
        }
    }
}

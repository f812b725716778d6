use std::path::{Path, PathBuf};
use std::time::Instant;

use acvolt::data::{
    decimate_moving_average, generate_synthetic, load_trace, summarize, write_trace, CurrentTrace,
    SyntheticSpec,
};
use acvolt::hierarchy::{
    pairwise_mu_table, posterior_predictive_density, predictive_grid, run_hierarchical_with,
    HierarchicalSettings, HyperSample,
};
use acvolt::inference::{
    mle_fit_with, run_single_chain_with, ExperimentLikelihood, FitResult, McmcSettings,
    OptimizerSettings,
};
use acvolt::model::PARAM_NAMES;
use acvolt::solver::{simulate, SolverGrid};
use acvolt::{ModelParams, PriorHypercube, RunConfig};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult, Context};
use crate::manifest::{OutputSet, RunManifest};
use crate::output;

/// Points per posterior-predictive curve.
const PREDICTIVE_POINTS: usize = 2001;
/// Curves extend this many component SDs past the extreme components.
const PREDICTIVE_WIDTH: f64 = 5.0;

fn load_config(path: &Path) -> CliResult<RunConfig> {
    Ok(RunConfig::load(path)?)
}

fn load_toml<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).expect("settings serialise")
}

fn load_traces(paths: &[PathBuf], sign_flip: bool) -> CliResult<Vec<CurrentTrace>> {
    paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            load_trace(p, sign_flip).context(|| format!("dataset {} ({})", i + 1, p.display()))
        })
        .collect()
}

fn likelihoods(
    traces: &[CurrentTrace],
    config: &RunConfig,
) -> CliResult<Vec<ExperimentLikelihood>> {
    traces
        .iter()
        .enumerate()
        .map(|(i, y)| {
            ExperimentLikelihood::new(y, &config.experiment, &config.grid)
                .context(|| format!("dataset {}", i + 1))
        })
        .collect()
}

/// Replaces the extension of `out` to name its manifest.
fn sibling_manifest(out: &Path) -> String {
    let stem = out
        .file_stem()
        .map_or_else(|| "output".into(), |s| s.to_string_lossy().into_owned());
    format!("{stem}.manifest.json")
}

fn parent_dir(out: &Path) -> PathBuf {
    match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn file_name(out: &Path) -> CliResult<String> {
    out.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| CliError::Usage(format!("{} is not a file path", out.display())))
}

pub struct SimulateArgs {
    pub config: PathBuf,
    pub params: PathBuf,
    pub out: PathBuf,
}

pub fn simulate_cmd(args: &SimulateArgs) -> CliResult<PathBuf> {
    let started = Instant::now();
    let config = load_config(&args.config)?;
    let params = ModelParams::load(&args.params)?;
    let name = file_name(&args.out)?;
    let grid = SolverGrid::for_config(&config.experiment, &config.grid)?;
    let trace = simulate(&params, &config.experiment, &grid)?;

    let mut manifest = RunManifest::new("simulate");
    manifest.add_input(&args.config)?;
    manifest.add_input(&args.params)?;
    manifest.config = Some(to_json(&config));
    manifest.settings = to_json(&params);

    let mut out = OutputSet::create(&parent_dir(&args.out), started)?;
    write_trace(&out.path(&name), &trace)?;
    out.record(&name);
    out.finish(manifest, &sibling_manifest(&args.out))
}

pub struct SynthArgs {
    pub config: PathBuf,
    pub spec: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct SyntheticRecord {
    file: String,
    theta: ModelParams,
    theta_dimensionless: [f64; 5],
    noise_sd: f64,
}

pub fn synth_cmd(args: &SynthArgs) -> CliResult<PathBuf> {
    let started = Instant::now();
    let config = load_config(&args.config)?;
    let mut spec = match &args.spec {
        Some(path) => load_toml::<SyntheticSpec>(path)?,
        None => SyntheticSpec::reference(0),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    let grid = SolverGrid::for_config(&config.experiment, &config.grid)?;
    let sets = generate_synthetic(&spec, &config.experiment, &grid)?;

    let mut manifest = RunManifest::new("synth");
    manifest.add_input(&args.config)?;
    if let Some(path) = &args.spec {
        manifest.add_input(path)?;
    }
    manifest.config = Some(to_json(&config));
    manifest.settings = to_json(&spec);
    manifest.seeds.insert("seed".into(), spec.seed);

    let mut out = OutputSet::create(&args.out, started)?;
    let mut records = Vec::new();
    for set in &sets {
        let name = format!("synth_{}.csv", set.index + 1);
        write_trace(&out.path(&name), &set.trace)?;
        out.record(&name);
        records.push(SyntheticRecord {
            file: name,
            theta: set.theta,
            theta_dimensionless: set.theta_dimensionless,
            noise_sd: set.noise_sd,
        });
    }
    manifest.datasets = Some(to_json(&records));
    out.finish(manifest, "manifest.json")
}

pub struct DecimateArgs {
    pub input: PathBuf,
    pub window: usize,
    pub sign_flip: bool,
    pub out: PathBuf,
}

pub fn decimate_cmd(args: &DecimateArgs) -> CliResult<PathBuf> {
    let started = Instant::now();
    let trace = load_trace(&args.input, args.sign_flip)?;
    let reduced = decimate_moving_average(&trace, args.window)?;
    let name = file_name(&args.out)?;

    let mut manifest = RunManifest::new("decimate");
    manifest.add_input(&args.input)?;
    manifest.settings = serde_json::json!({ "window": args.window, "sign_flip": args.sign_flip });

    let mut out = OutputSet::create(&parent_dir(&args.out), started)?;
    write_trace(&out.path(&name), &reduced)?;
    out.record(&name);
    out.finish(manifest, &sibling_manifest(&args.out))
}

/// Options shared by the inference commands.
pub struct InferenceArgs {
    pub data: Vec<PathBuf>,
    pub config: PathBuf,
    pub settings: Option<PathBuf>,
    pub seed: Option<u64>,
    pub sign_flip: bool,
    pub dimensionless: bool,
    pub out: PathBuf,
}

impl InferenceArgs {
    fn manifest(&self, command: &str, config: &RunConfig) -> CliResult<RunManifest> {
        let mut manifest = RunManifest::new(command);
        manifest.add_input(&self.config)?;
        if let Some(path) = &self.settings {
            manifest.add_input(path)?;
        }
        for path in &self.data {
            manifest.add_input(path)?;
        }
        manifest.config = Some(to_json(config));
        Ok(manifest)
    }
}

#[derive(Serialize)]
struct FitReport<'a> {
    dataset: usize,
    source: String,
    optimizer_evals: usize,
    /// Currents in amperes.
    log_likelihood_at_hat: f64,
    theta_hat: &'a ModelParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    dimensionless: Option<DimensionlessReport>,
}

#[derive(Serialize)]
struct DimensionlessReport {
    e0: f64,
    k0: f64,
    alpha: f64,
    cdl: f64,
    ru: f64,
    sigma: f64,
}

fn write_fit(
    out: &mut OutputSet,
    index: usize,
    source: &Path,
    fit: &FitResult,
    dimensionless: bool,
) -> CliResult<()> {
    let d = &fit.dimensionless;
    let report = FitReport {
        dataset: index + 1,
        source: source.display().to_string(),
        optimizer_evals: fit.optimizer_evals,
        log_likelihood_at_hat: fit.log_likelihood_at_hat,
        theta_hat: &fit.theta_hat,
        dimensionless: dimensionless.then_some(DimensionlessReport {
            e0: d.e0,
            k0: d.k0,
            alpha: d.alpha,
            cdl: d.cdl,
            ru: d.ru,
            sigma: d.sigma,
        }),
    };
    let text = toml::to_string(&report).expect("fit report serialises");
    out.write(&format!("fit_{}.toml", index + 1), |w| {
        w.write_all(text.as_bytes())
    })
}

fn write_fitted_trace(
    out: &mut OutputSet,
    index: usize,
    trace: &CurrentTrace,
    lik: &ExperimentLikelihood,
    fit: &FitResult,
) -> CliResult<()> {
    let scale = lik.scales().current;
    let fitted: Vec<f64> = lik
        .simulate(&fit.dimensionless.physical())
        .context(|| format!("dataset {}", index + 1))?
        .iter()
        .map(|v| v * scale)
        .collect();
    out.write(&format!("fit_{}_trace.csv", index + 1), |w| {
        output::write_columns(
            w,
            "t_seconds,observed_amps,fitted_amps",
            &[&trace.times, &trace.currents, &fitted],
        )
    })
}

fn seeded_optimizer(mut settings: OptimizerSettings, seed: Option<u64>) -> OptimizerSettings {
    if let Some(seed) = seed {
        settings.seed = seed;
    }
    settings
}

pub fn fit_cmd(args: &InferenceArgs) -> CliResult<PathBuf> {
    let started = Instant::now();
    let config = load_config(&args.config)?;
    let settings = match &args.settings {
        Some(path) => load_toml::<OptimizerSettings>(path)?,
        None => OptimizerSettings::default(),
    };
    let settings = seeded_optimizer(settings, args.seed);
    require_data(&args.data, 1)?;
    let traces = load_traces(&args.data, args.sign_flip)?;
    let liks = likelihoods(&traces, &config)?;
    let cube = PriorHypercube::default_for(&config.experiment);

    let fits = liks
        .par_iter()
        .enumerate()
        .map(|(i, lik)| {
            mle_fit_with(lik, &cube, &settings).context(|| format!("dataset {}", i + 1))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut manifest = args.manifest("fit", &config)?;
    manifest.settings = to_json(&settings);
    manifest.seeds.insert("optimizer".into(), settings.seed);
    let mut out = OutputSet::create(&args.out, started)?;
    for (i, fit) in fits.iter().enumerate() {
        write_fit(&mut out, i, &args.data[i], fit, args.dimensionless)?;
        write_fitted_trace(&mut out, i, &traces[i], &liks[i], fit)?;
    }
    out.finish(manifest, "manifest.json")
}

fn require_data(data: &[PathBuf], min: usize) -> CliResult<()> {
    if data.len() < min {
        return Err(CliError::Usage(format!(
            "need at least {min} data file(s), got {}",
            data.len()
        )));
    }
    Ok(())
}

fn sample_names() -> Vec<String> {
    PARAM_NAMES
        .iter()
        .map(|s| s.to_string())
        .chain(["sigma".to_string()])
        .collect()
}

fn rows6(samples: &[Vec<f64>]) -> Vec<[f64; 6]> {
    samples
        .iter()
        .map(|x| std::array::from_fn(|k| x[k]))
        .collect()
}

fn dimensional_rows(samples: &[ModelParams]) -> Vec<[f64; 6]> {
    samples
        .iter()
        .map(|s| [s.e0, s.k0, s.alpha, s.cdl, s.ru, s.sigma])
        .collect()
}

fn write_chain_outputs(
    out: &mut OutputSet,
    prefix: &str,
    index: usize,
    rows: &[[f64; 6]],
    log_posteriors: &[f64],
) -> CliResult<()> {
    out.write(&format!("{prefix}samples_{}.csv", index + 1), |w| {
        output::write_samples(w, rows, log_posteriors)
    })?;
    let summary = summarize(rows).context(|| format!("dataset {}", index + 1))?;
    out.write(&format!("{prefix}summary_{}.csv", index + 1), |w| {
        output::write_summary(w, &sample_names(), &summary)
    })
}

pub struct McmcArgs {
    pub common: InferenceArgs,
    pub samples: Option<usize>,
    pub burn_in: Option<usize>,
}

pub fn mcmc_cmd(args: &McmcArgs) -> CliResult<PathBuf> {
    let started = Instant::now();
    let common = &args.common;
    let config = load_config(&common.config)?;
    let mut settings = match &common.settings {
        Some(path) => load_toml::<McmcSettings>(path)?,
        None => McmcSettings::default(),
    };
    if let Some(n) = args.samples {
        settings.n_samples = n;
    }
    if let Some(b) = args.burn_in {
        settings.burn_in = b;
    }
    if let Some(seed) = common.seed {
        settings.seed = seed;
        settings.optimizer.seed = seed;
    }
    settings.validate()?;
    require_data(&common.data, 1)?;
    let traces = load_traces(&common.data, common.sign_flip)?;
    let liks = likelihoods(&traces, &config)?;
    let cube = PriorHypercube::default_for(&config.experiment);

    let runs = liks
        .par_iter()
        .enumerate()
        .map(|(i, lik)| {
            run_single_chain_with(lik, &cube, &settings, i as u64)
                .context(|| format!("dataset {}", i + 1))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut manifest = common.manifest("mcmc", &config)?;
    manifest.settings = to_json(&settings);
    manifest.seeds.insert("chain".into(), settings.seed);
    manifest
        .seeds
        .insert("optimizer".into(), settings.optimizer.seed);
    let mut out = OutputSet::create(&common.out, started)?;
    for (i, run) in runs.iter().enumerate() {
        write_fit(&mut out, i, &common.data[i], &run.fit, common.dimensionless)?;
        let (rows, lps) = if common.dimensionless {
            let lps = run.chain.retained_log_posteriors(run.burn_in).to_vec();
            (rows6(run.chain.retained(run.burn_in)), lps)
        } else {
            (
                dimensional_rows(&run.retained_dimensional()),
                run.retained_log_posteriors(),
            )
        };
        write_chain_outputs(&mut out, "", i, &rows, &lps)?;
    }
    out.finish(manifest, "manifest.json")
}

pub struct HierArgs {
    pub common: InferenceArgs,
    pub samples: Option<usize>,
    pub burn_in: Option<usize>,
    pub steps_per_sweep: Option<usize>,
}

pub fn hier_cmd(args: &HierArgs) -> CliResult<PathBuf> {
    let started = Instant::now();
    let common = &args.common;
    let config = load_config(&common.config)?;
    let mut settings = match &common.settings {
        Some(path) => load_toml::<HierarchicalSettings>(path)?,
        None => HierarchicalSettings::default(),
    };
    if let Some(n) = args.samples {
        settings.n_sweeps = n;
    }
    if let Some(b) = args.burn_in {
        settings.burn_in = b;
    }
    if let Some(s) = args.steps_per_sweep {
        settings.steps_per_sweep = s;
    }
    if let Some(seed) = common.seed {
        settings.seed = seed;
        settings.optimizer.seed = seed;
    }
    settings.validate()?;
    require_data(&common.data, 2)?;
    let traces = load_traces(&common.data, common.sign_flip)?;
    let liks = likelihoods(&traces, &config)?;
    let cube = PriorHypercube::default_for(&config.experiment);

    let result = run_hierarchical_with(&liks, &config.experiment, &cube, None, &settings)?;

    let mut manifest = common.manifest("hier", &config)?;
    manifest.settings = to_json(&settings);
    manifest.seeds.insert("sampler".into(), settings.seed);
    manifest
        .seeds
        .insert("optimizer".into(), settings.optimizer.seed);
    let mut out = OutputSet::create(&common.out, started)?;

    let hyper: Vec<HyperSample> = if common.dimensionless {
        result.hyper_samples.clone()
    } else {
        result.hyper_samples_dimensional()
    };
    out.write("hyper_samples.csv", |w| output::write_hyper(w, &hyper))?;
    let flat: Vec<Vec<f64>> = hyper.iter().map(output::hyper_row).collect();
    let hyper_summary = summarize(&flat)?;
    out.write("hyper_summary.csv", |w| {
        output::write_summary(w, &output::hyper_header(), &hyper_summary)
    })?;

    for (k, name) in PARAM_NAMES.iter().enumerate() {
        let points = predictive_grid(&hyper, k, PREDICTIVE_POINTS, PREDICTIVE_WIDTH)?;
        let density = posterior_predictive_density(&hyper, k, &points)?;
        out.write(&format!("predictive_{name}.csv"), |w| {
            output::write_columns(w, &format!("{name},density"), &[&points, &density])
        })?;
    }
    let table = pairwise_mu_table(&hyper)?;
    out.write("pairwise_mu.csv", |w| output::write_pairwise(w, &table))?;

    for (i, fit) in result.fits.iter().enumerate() {
        write_fit(&mut out, i, &common.data[i], fit, common.dimensionless)?;
        let (rows, lps) = if common.dimensionless {
            let from = settings.burn_in * settings.steps_per_sweep;
            let chain = &result.bottom_chains[i];
            (
                rows6(chain.retained(from)),
                chain.retained_log_posteriors(from).to_vec(),
            )
        } else {
            (
                dimensional_rows(&result.bottom_samples_dimensional(i)),
                result.bottom_log_posteriors(i),
            )
        };
        if rows.len() >= 2 {
            write_chain_outputs(&mut out, "bottom_", i, &rows, &lps)?;
        }
    }
    out.finish(manifest, "manifest.json")
}

//! `acvolt`: simulate AC voltammograms, generate synthetic datasets and run
//! the single-level and hierarchical samplers from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};

mod commands;
mod error;
mod manifest;
mod output;

use commands::{DecimateArgs, HierArgs, InferenceArgs, McmcArgs, SimulateArgs, SynthArgs};
use error::{CliError, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(
    name = "acvolt",
    version,
    about = "AC voltammetry simulation and Bayesian parameter recovery"
)]
struct Cli {
    /// Worker threads (0: one per core).
    #[arg(long, global = true, env = "ACVOLT_THREADS", default_value_t = 0)]
    threads: usize,

    /// Log progress to stderr; repeat for more detail.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one noise-free current trace.
    Simulate {
        /// Experiment configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Parameter file with e0, k0, alpha, cdl, ru (TOML).
        #[arg(long)]
        params: PathBuf,
        /// Output CSV; the manifest is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a family of noisy synthetic datasets.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Synthetic spec (TOML); defaults to the ten-set reference family.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Block-average a raw trace to fewer points.
    Decimate {
        input: PathBuf,
        #[arg(long, default_value_t = 21)]
        window: usize,
        /// Negate currents on input.
        #[arg(long)]
        sign_flip: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Maximum-likelihood fit of each trace.
    Fit(CommonArgs),
    /// Adaptive Metropolis-Hastings chain per trace.
    Mcmc {
        #[command(flatten)]
        common: CommonArgs,
        /// Chain length including burn-in [default: 10000].
        #[arg(long)]
        samples: Option<usize>,
        /// Discarded initial steps [default: 5000].
        #[arg(long)]
        burn_in: Option<usize>,
    },
    /// Hierarchical Metropolis-within-Gibbs over two or more traces.
    Hier {
        #[command(flatten)]
        common: CommonArgs,
        /// Gibbs sweeps including burn-in [default: 10000].
        #[arg(long)]
        samples: Option<usize>,
        /// Discarded initial sweeps [default: 5000].
        #[arg(long)]
        burn_in: Option<usize>,
        /// Bottom-level steps per sweep [default: 1].
        #[arg(long)]
        steps_per_sweep: Option<usize>,
    },
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Trace CSV files (`time, current` with a header row).
    #[arg(required = true)]
    data: Vec<PathBuf>,
    #[arg(long)]
    config: PathBuf,
    /// Sampler and optimiser settings (TOML); flags take precedence.
    #[arg(long)]
    settings: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Negate measured currents on input.
    #[arg(long)]
    sign_flip: bool,
    /// Report solver units instead of volts, cm/s, F/cm², Ω and A.
    #[arg(long)]
    dimensionless: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

impl From<CommonArgs> for InferenceArgs {
    fn from(a: CommonArgs) -> Self {
        InferenceArgs {
            data: a.data,
            config: a.config,
            settings: a.settings,
            seed: a.seed,
            sign_flip: a.sign_flip,
            dimensionless: a.dimensionless,
            out: a.out,
        }
    }
}

fn run(command: Command) -> Result<PathBuf, CliError> {
    match command {
        Command::Simulate {
            config,
            params,
            out,
        } => commands::simulate_cmd(&SimulateArgs {
            config,
            params,
            out,
        }),
        Command::Synth {
            config,
            spec,
            seed,
            out,
        } => commands::synth_cmd(&SynthArgs {
            config,
            spec,
            seed,
            out,
        }),
        Command::Decimate {
            input,
            window,
            sign_flip,
            out,
        } => commands::decimate_cmd(&DecimateArgs {
            input,
            window,
            sign_flip,
            out,
        }),
        Command::Fit(common) => commands::fit_cmd(&common.into()),
        Command::Mcmc {
            common,
            samples,
            burn_in,
        } => commands::mcmc_cmd(&McmcArgs {
            common: common.into(),
            samples,
            burn_in,
        }),
        Command::Hier {
            common,
            samples,
            burn_in,
            steps_per_sweep,
        } => commands::hier_cmd(&HierArgs {
            common: common.into(),
            samples,
            burn_in,
            steps_per_sweep,
        }),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("acvolt: error: cannot start thread pool: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }

    match run(cli.command) {
        Ok(manifest) => {
            log::info!("wrote {}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("acvolt: error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

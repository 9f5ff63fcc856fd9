//! `qsd-lab`: reproducible experiments on conditioned branching processes.
//!
//! Every experiment reads a JSON config, runs with a mandatory seed, and
//! writes one output directory (`config.json`, `results.csv`,
//! `distributions.json`, optional `plots/*.svg`). Reruns with the same
//! config, seed, and binary are byte-identical regardless of thread count.
//! Exit codes: 0 success, 2 config error, 3 runtime failure.

mod compare;
mod config;
mod experiments;
mod output;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("error: {0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "qsd-lab",
    about = "Experiments on quasi-stationary laws of branching genealogies",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment configuration (JSON)
    #[arg(long)]
    config: PathBuf,
    /// RNG seed; overrides the seed in the config file
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for this run
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all cores); results do not depend on it
    #[arg(long)]
    threads: Option<usize>,
    /// Also emit static SVG plots under <out>/plots/
    #[arg(long)]
    plots: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ensemble law of the genealogy tree against the spectral QSD
    Yaglom(RunArgs),
    /// Two tree initial states converging to one conditioned law
    UniquenessBpg(RunArgs),
    /// Two lattice initial states converging to one conditioned law
    UniquenessBrw(RunArgs),
    /// Saturation of size-path alternations, ensemble vs exact
    Gevents(RunArgs),
    /// Jump activity of the surviving-line walker
    Walker(RunArgs),
    /// Occupation of the never-absorbed chain vs its stationary law
    Qprocess(RunArgs),
    /// Decay rate and eigenvectors of the truncated generator
    Spectral(RunArgs),
    /// One-parameter family of quasi-stationary laws
    Family(RunArgs),
    /// Compare two result directories of the same config across seeds
    Compare { dir_a: PathBuf, dir_b: PathBuf },
}

impl Command {
    fn experiment_name(&self) -> Option<&'static str> {
        match self {
            Command::Yaglom(_) => Some("yaglom"),
            Command::UniquenessBpg(_) => Some("uniqueness-bpg"),
            Command::UniquenessBrw(_) => Some("uniqueness-brw"),
            Command::Gevents(_) => Some("gevents"),
            Command::Walker(_) => Some("walker"),
            Command::Qprocess(_) => Some("qprocess"),
            Command::Spectral(_) => Some("spectral"),
            Command::Family(_) => Some("family"),
            Command::Compare { .. } => None,
        }
    }

    fn run_args(&self) -> Option<&RunArgs> {
        match self {
            Command::Yaglom(a)
            | Command::UniquenessBpg(a)
            | Command::UniquenessBrw(a)
            | Command::Gevents(a)
            | Command::Walker(a)
            | Command::Qprocess(a)
            | Command::Spectral(a)
            | Command::Family(a) => Some(a),
            Command::Compare { .. } => None,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Command::Compare { dir_a, dir_b } = &cli.command {
        let report = compare::compare_runs(dir_a, dir_b)?;
        print!("{report}");
        return Ok(());
    }
    let name = cli.command.experiment_name().expect("run command");
    let args = cli.command.run_args().expect("run command");
    if let Some(threads) = args.threads {
        if threads == 0 {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        // Results never depend on worker count; this only sizes the pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let mut config = config::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = Some(seed);
    }
    config.validate(name)?;
    experiments::run(&config, &args.out, args.plots)
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}

mod compare;
mod config;
mod experiments;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::experiments::{ExperimentName, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Library(#[from] pismooth::Error),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Library(e) if e.is_numerical() => 3,
            CliError::Library(pismooth::Error::Io { .. }) | CliError::Io(_) => 1,
            CliError::Library(_) => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "pismooth", version, about = "Smoothing for partially observed diffusions")]
struct Cli {
    /// Worker threads; defaults to PISMOOTH_THREADS, then to every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Suppress the per-iteration log.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the methods of a config file, or repeat a run from its manifest.
    Run {
        #[arg(required_unless_present = "manifest", conflicts_with = "manifest")]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one of the built-in experiments.
    Experiment {
        name: ExperimentName,
        /// Run only this method (apis, fs, ffbsi or kalman).
        #[arg(long)]
        method: Option<String>,
        /// Shrink the experiment to a seconds-long check.
        #[arg(long)]
        smoke: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Forward particles of every method.
        #[arg(long = "N")]
        particles: Option<usize>,
        #[arg(long)]
        eta: Option<f64>,
        /// Number of observations.
        #[arg(long = "J")]
        observations: Option<usize>,
    },
    /// Join the marginals of several run directories into one table.
    Compare {
        #[arg(required = true, num_args = 1..)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a config file without running anything.
    ValidateConfig { config: PathBuf },
    /// Print a built-in experiment config.
    ShowConfig { name: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads(cli.threads)?;
    let log = !cli.quiet;
    match cli.command {
        Command::Run { config, manifest, seed, out } => {
            let mut cfg = match (config, manifest) {
                (Some(path), None) => ExperimentConfig::load(&path)?,
                (None, Some(path)) => runner::config_from_manifest(&path)?,
                _ => unreachable!("clap enforces exactly one source"),
            };
            if let Some(seed) = seed {
                cfg.run.seed = seed;
            }
            if let Some(out) = out {
                cfg.run.out_dir = out;
            }
            cfg.validate()?;
            let dir = cfg.run.out_dir.clone();
            let rows = runner::run_config(&cfg, &dir, log)?;
            runner::write_summary(&dir.join("summary.csv"), &rows)?;
            Ok(())
        }
        Command::Experiment { name, method, smoke, seed, repeats, out, particles, eta, observations } => {
            let overrides = Overrides { method, smoke, seed, repeats, particles, eta, observations };
            experiments::run_experiment(name, &overrides, &out, log)
        }
        Command::Compare { dirs, out } => compare::compare(&dirs, &out),
        Command::ValidateConfig { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            cfg.validate()?;
            runner::check_data(&cfg)?;
            println!("{}: ok ({} model, methods: {})", config.display(), cfg.model.name(), cfg.methods.names().join(", "));
            Ok(())
        }
        Command::ShowConfig { name } => {
            let text = experiments::SHIPPED
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, text)| *text)
                .ok_or_else(|| {
                    let names: Vec<&str> = experiments::SHIPPED.iter().map(|(n, _)| *n).collect();
                    CliError::Config(format!("unknown config {name}; available: {}", names.join(", ")))
                })?;
            print!("{text}");
            Ok(())
        }
    }
}

fn init_threads(flag: Option<usize>) -> Result<(), CliError> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var("PISMOOTH_THREADS") {
            Ok(v) => Some(v.trim().parse().map_err(|_| CliError::Config(format!("PISMOOTH_THREADS={v} is not a number")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("the thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

//! `distinit` command-line front end.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid configuration file {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] distinit::Error),
}

impl CliError {
    /// 1 usage, 2 data or format, 3 numeric failure.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Core(distinit::Error::InvalidConfig(_)) => 1,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "distinit", version, about = "Rigid registration initialization from coarse segmentations")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "DISTINIT_THREADS", default_value_t = 0)]
    pub threads: usize,
    /// Seed for every random component.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: out].
    #[arg(long, global = true, value_name = "DIR")]
    pub output: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic phantom pair with ground truth.
    Phantom(commands::PhantomArgs),
    /// Exact Euclidean distance maps of a label map.
    Edt(commands::EdtArgs),
    /// Register a moving label map to a fixed one.
    Register(commands::RegisterArgs),
    /// Score a transform against paired landmarks.
    Evaluate(commands::EvaluateArgs),
    /// Simulate landmark-based initialization with noisy landmarks.
    LandmarkSim(commands::LandmarkSimArgs),
    /// Robustness sweep over perturbed starting points.
    Sweep(commands::SweepArgs),
}

fn resolve(global: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed.or(cfg.seed) {
        cfg.apply_seed(seed);
    }
    if let Some(out) = &global.output {
        cfg.paths.output = Some(out.clone());
    }
    cfg.verbosity = cfg.verbosity.max(global.verbose);
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = resolve(&cli.global)?;
    let level = match cfg.verbosity {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    match cli.command {
        Command::Phantom(a) => commands::phantom(&a, &mut cfg),
        Command::Edt(a) => commands::edt(&a, &mut cfg),
        Command::Register(a) => commands::register(&a, &mut cfg),
        Command::Evaluate(a) => commands::evaluate(&a, &mut cfg),
        Command::LandmarkSim(a) => commands::landmark_sim(&a, &mut cfg),
        Command::Sweep(a) => commands::sweep(&a, &mut cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

//! Command-line front end for shapeflow.
//!
//! Exit codes: 0 success, 1 config or input error, 2 completed without
//! converging, 3 numeric failure.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] shapeflow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(shapeflow::Error::Numeric { .. }) => 3,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LogLevel {
    Info,
    Debug,
}

#[derive(Debug, Parser)]
#[command(name = "shapeflow", version, about = "Diffeomorphic shape matching with elastic and growth metrics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (JSON or TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir` from the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for per-element work.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[arg(long, global = true, value_enum)]
    pub log_level: Option<LogLevel>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Solve a matching problem between `source` and `target`.
    Match,
    /// Replay stored controls on the source, tracers and a deformation grid.
    Rollout,
    /// Evaluate the norms of a velocity (and growth) field on a shape.
    Energy,
    /// Compare thin laminar shells with the surface metric.
    ShellLimit,
    /// Growth norm of a growth field and its minimizing velocity.
    GrowthNorm,
}

/// Parse arguments, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<i32, CliError> {
    let Some(path) = &cli.config else {
        return Err(CliError::Config("--config is required".into()));
    };
    if cli.threads == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    let mut cfg = RunConfig::load(path)?;
    if let Some(out) = &cli.out {
        cfg.output.dir = Some(out.clone());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Match => commands::cmd_match(&cfg),
        Command::Rollout => commands::cmd_rollout(&cfg),
        Command::Energy => commands::cmd_energy(&cfg),
        Command::ShellLimit => commands::cmd_shell_limit(&cfg),
        Command::GrowthNorm => commands::cmd_growth_norm(&cfg),
    })
}

/// Log filter from the flag, falling back to the config's `verbosity`.
pub fn log_filter(cli: &Cli) -> log::LevelFilter {
    let from_config = || {
        cli.config
            .as_deref()
            .and_then(|p| RunConfig::load(p).ok())
            .and_then(|c| c.verbosity)
            .filter(|v| v == "debug")
            .map(|_| LogLevel::Debug)
    };
    match cli.log_level.or_else(from_config) {
        Some(LogLevel::Debug) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Info,
    }
}

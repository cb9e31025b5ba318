//! Command-line front end: `hilbert-flow <command> --config <path>`.
//!
//! Exit codes: 0 on success (a flow that breaks down early still succeeds),
//! 2 for configuration errors, 3 for numerical or I/O failures.

mod commands;
pub mod config;
pub mod output;
mod verify;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{parse_config, ConfigError, Format, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "hilbert-flow",
    version,
    about = "Coupling renormalization under Hilbert-space truncation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Also render SVG line plots.
    #[arg(long, global = true)]
    pub svg: bool,
    /// Overrides the model seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Full spectrum and lowest eigenpair.
    Spectrum,
    /// Zero-temperature reduction cascade and its continuum flow.
    Flow,
    /// Finite-temperature cascade and free-energy gap table.
    Thermal,
    /// Exceptional points, real-axis crossings and the fixed-point correlation.
    Exceptional,
    /// Built-in oracle checks.
    Verify,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Numerical(format!("i/o: {e}"))
    }
}

/// Reads the config file and applies the command-line overrides.
pub fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = parse_config(&text, path)?;
    if let Some(seed) = cli.seed {
        cfg.model.seed = seed;
        cfg.eigen.lanczos.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    Ok(cfg)
}

fn init_logging(level: &str) {
    let _ = env_logger::Builder::new()
        .parse_filters(level)
        .format_timestamp(None)
        .try_init();
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    if cli.command == Command::Verify {
        init_logging("warn");
        return verify::run(cli.out.as_deref());
    }
    let cfg = load_config(cli)?;
    init_logging(&cfg.log_level);
    match cli.command {
        Command::Spectrum => commands::spectrum(&cfg, cli.svg),
        Command::Flow => commands::flow(&cfg, cli.svg),
        Command::Thermal => commands::thermal(&cfg, cli.svg),
        Command::Exceptional => commands::exceptional(&cfg, cli.svg),
        Command::Verify => unreachable!(),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("hilbert-flow: {e}");
            e.exit_code()
        }
    }
}

//! Command-line front end: `train`, `eval`, `sample`, `bench` and
//! `gradcheck`.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use charrnn::schemes::{DrawMode, Sampling};
use charrnn::Error;

pub use config::{ConfigError, RunConfig};

/// Environment variable naming the directory that holds run directories.
pub const OUT_ROOT_ENV: &str = "CHARRNN_OUT_ROOT";
pub const DEFAULT_OUT_ROOT: &str = "runs";

pub const CONFIG_SNAPSHOT: &str = "config.snapshot";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "log.txt";
pub const BENCH_FILE: &str = "bench.csv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Numerical(String),
    #[error("gradcheck failed on {failed} of {total} cases")]
    Gradcheck { failed: usize, total: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Gradcheck { .. } => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::NonFiniteLoss { .. } => CliError::Numerical(msg),
            Error::Io { .. }
            | Error::InvalidEncoding { .. }
            | Error::Checkpoint(_)
            | Error::EmptyCorpus(_)
            | Error::UnknownCharacter(_) => CliError::Io(msg),
            Error::Config(_)
            | Error::TokenOutOfRange { .. }
            | Error::LengthMismatch(_)
            | Error::EmptySequence
            | Error::SequenceTooShort { .. } => CliError::Config(msg),
        }
    }
}

pub(crate) fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(
    name = "charrnn",
    version,
    about = "Character-level LSTM training and sampling"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct ConfigArgs {
    /// Config file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value`, applied after the config file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Greedy,
    Multinomial,
}

impl From<ModeArg> for DrawMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Greedy => DrawMode::Greedy,
            ModeArg::Multinomial => DrawMode::Multinomial,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SamplingArg {
    Windowed,
    Progressive,
}

impl From<SamplingArg> for Sampling {
    fn from(s: SamplingArg) -> Self {
        match s {
            SamplingArg::Windowed => Sampling::Windowed,
            SamplingArg::Progressive => Sampling::Progressive,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a run directory.
    Train(ConfigArgs),
    /// Print the perplexity of a text file under a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Generate text from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Tokens to generate after the seed.
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Multinomial)]
        mode: ModeArg,
        /// Seed text; defaults to the seed stored in the checkpoint.
        #[arg(long)]
        seed_text: Option<String>,
        /// Overrides the procedure implied by the checkpoint's scheme.
        #[arg(long, value_enum)]
        sampling: Option<SamplingArg>,
        /// Seed of the random draws.
        #[arg(long, default_value_t = 0)]
        rng_seed: u64,
    },
    /// Time training and sampling for each scheme.
    Bench(ConfigArgs),
    /// Compare analytic gradients with finite differences on random tiny models.
    Gradcheck(ConfigArgs),
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code. Diagnostics go to stderr.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

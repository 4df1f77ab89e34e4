//! The `amdft` command line: ingestion, deterministic-model evaluation,
//! training-fraction sweeps and uncertainty studies. Every command writes
//! its artifacts plus a `manifest.json` into `--out`.

pub mod commands;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use amdft_core::harness::Preset;
use amdft_core::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Full,
    Ci,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Preset {
        match p {
            PresetArg::Full => Preset::Full,
            PresetArg::Ci => Preset::Ci,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "amdft",
    version,
    about = "Dimensional-deviation regression and uncertainty toolkit"
)]
pub struct Cli {
    /// Measurement CSV; overrides the config's data section.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Schema TOML; the built-in schema is used when absent.
    #[arg(long, global = true)]
    pub schema: Option<PathBuf>,
    /// Run document (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "amdft-out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub preset: Option<PresetArg>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate and encode a dataset, writing the design matrix and a summary.
    Ingest,
    /// Dual Monte Carlo evaluation of every configured model family.
    Evaluate,
    /// Evaluation across training fractions.
    Sweep,
    /// Uncertainty-vs-fraction study and probabilistic parity tables.
    Uq {
        /// Posterior draws per prediction; overrides the config.
        #[arg(long)]
        draws: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Evaluate => "evaluate",
            Command::Sweep => "sweep",
            Command::Uq { .. } => "uq",
        }
    }
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Numerical(_) | Error::Diverged { .. } | Error::LengthMismatch { .. } => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

/// Runs the parsed command and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = match cli.workers {
        Some(0) => Err(Error::Config("--workers must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))
            .and_then(|pool| pool.install(|| commands::dispatch(cli))),
        None => commands::dispatch(cli),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("amdft {}: {e}", cli.command.name());
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn exit_code_classes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 3);
        assert_eq!(exit_code(&Error::Schema("x".into())), 2);
        assert_eq!(exit_code(&Error::MissingColumn { column: "a".into() }), 2);
        assert_eq!(exit_code(&Error::Numerical("x".into())), 4);
        assert_eq!(
            exit_code(&Error::Diverged {
                iteration: 1,
                loss: f64::NAN
            }),
            4
        );
    }

    #[test]
    fn global_flags_parse_after_the_subcommand() {
        let cli = Cli::try_parse_from(["amdft", "uq", "--draws", "1", "--seed", "5", "--preset", "ci"]).unwrap();
        assert_eq!(cli.seed, Some(5));
        assert_eq!(cli.preset, Some(PresetArg::Ci));
        assert!(matches!(cli.command, Command::Uq { draws: Some(1) }));
    }
}

//! Single executable for the 2D preference-optimization lab.
//!
//! Subcommands cover the full pipeline: `gen-data`, `gen-pairs`, `pretrain`,
//! `finetune`, `sample`, `eval`, `sweep` and `selfcheck`. Every command
//! writes a manifest (resolved configuration, absolute paths, seed, tool
//! version) into the output directory before doing any heavy work, never
//! mutates its inputs, and is bitwise reproducible from the manifest.
//!
//! Exit codes: 0 ok, 1 selfcheck failure, 2 flag validation, 3 missing or
//! invalid inputs, 4 numeric failure (non-finite loss), 5 sweep finished
//! with flagged cells.

mod commands;
mod manifest;

use clap::{Parser, Subcommand};
use prefdiff_core::Error as CoreError;
use std::process::ExitCode;

pub const EXIT_SELFCHECK: u8 = 1;
pub const EXIT_FLAGS: u8 = 2;
pub const EXIT_INPUT: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;
pub const EXIT_PARTIAL_SWEEP: u8 = 5;

#[derive(Debug)]
pub enum CliError {
    Flags(String),
    Input(String),
    Numeric(String),
    PartialSweep(usize),
    SelfcheckFailed,
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::SelfcheckFailed => EXIT_SELFCHECK,
            CliError::Flags(_) => EXIT_FLAGS,
            CliError::Input(_) => EXIT_INPUT,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::PartialSweep(_) => EXIT_PARTIAL_SWEEP,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Flags(m) => write!(f, "invalid flags: {m}"),
            CliError::Input(m) => write!(f, "invalid input: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
            CliError::PartialSweep(n) => write!(f, "sweep finished with {n} flagged cell(s)"),
            CliError::SelfcheckFailed => write!(f, "selfcheck failed"),
        }
    }
}

/// Errors raised while executing a command (inputs already validated).
pub fn run_error(e: CoreError) -> CliError {
    match e {
        CoreError::NonFinite(m) => CliError::Numeric(m),
        other => CliError::Input(other.to_string()),
    }
}

/// Errors raised while resolving flags and configuration.
pub fn flag_error(e: CoreError) -> CliError {
    CliError::Flags(e.to_string())
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(
    name = "prefdiff",
    version,
    about = "2D conditional-diffusion preference-optimization lab"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the clean and corrupted toy datasets.
    GenData(commands::GenDataArgs),
    /// Build a preference-pair CSV (paired or unpaired mode).
    GenPairs(commands::GenPairsArgs),
    /// Pretrain the reference model on a dataset CSV.
    Pretrain(commands::PretrainArgs),
    /// Fine-tune a student against a frozen reference on preference pairs.
    Finetune(commands::FinetuneArgs),
    /// Sample points per condition from a checkpoint.
    Sample(commands::SampleArgs),
    /// Score samples against the ground-truth mixture and render a scatter.
    Eval(commands::EvalArgs),
    /// Run the N × beta grid and emit grid.csv plus per-cell artifacts.
    Sweep(commands::SweepArgs),
    /// Run the fast invariant suite and exit non-zero on any failure.
    Selfcheck(commands::SelfcheckArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data(args),
        Command::GenPairs(args) => commands::gen_pairs(args),
        Command::Pretrain(args) => commands::pretrain(args),
        Command::Finetune(args) => commands::finetune(args),
        Command::Sample(args) => commands::sample(args),
        Command::Eval(args) => commands::eval(args),
        Command::Sweep(args) => commands::sweep(args),
        Command::Selfcheck(args) => commands::selfcheck(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

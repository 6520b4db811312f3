//! `supnorm-gof`: rates, tests, priors and risk experiments from the command line.

mod commands;
mod config;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use supnorm_gof::error::Error as LibError;

use config::{Format, Model};

#[derive(Debug, Parser)]
#[command(name = "supnorm-gof", version, about = "Sup-norm goodness-of-fit tests for Poisson and multinomial nulls")]
pub struct Cli {
    #[command(subcommand)]
    pub mode: Mode,

    #[command(flatten)]
    pub opts: Options,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Mode {
    /// Print the rate profile of the null as JSON.
    Rate,
    /// Run the calibrated test on every row of a count table.
    Test,
    /// Emit draws from the lower-bound prior as JSON lines.
    Prior,
    /// Exact verification of a lower-bound step on a small null.
    Verify {
        #[arg(value_enum)]
        check: VerifyCheck,
    },
    /// Monte Carlo risk of the calibrated test against the prior.
    Risk,
    /// Sharp-constant sweep over a grid of xi values.
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VerifyCheck {
    /// TV before and after flattening the spike prior.
    Flattening,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Options {
    /// Null spec: a JSON file or an inline JSON object.
    #[arg(long, global = true)]
    pub null: Option<String>,

    /// Count table, one row of p integers per replicate.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,

    #[arg(long, global = true, default_value_t = 0.05)]
    pub eta: f64,

    #[arg(long, global = true, default_value_t = 10_000)]
    pub trials: u64,

    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Output file, written atomically; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Comma-separated, strictly increasing.
    #[arg(long, global = true, default_value = "0.5,1,1.5,2,3")]
    pub xi_grid: String,

    /// `log-p` or a constant greater than 1.
    #[arg(long, global = true, default_value = "log-p")]
    pub alpha_rule: String,

    #[arg(long, global = true, value_enum)]
    pub model: Option<Model>,

    /// Prior scale `c`; the multinomial prior uses its certified value when absent.
    #[arg(long, global = true)]
    pub c: Option<f64>,

    /// Number of prior draws.
    #[arg(long, global = true, default_value_t = 10)]
    pub draws: usize,
}

#[derive(Debug)]
pub enum CliError {
    Config { field: String, msg: String },
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn config(field: &str, msg: impl Into<String>) -> Self {
        CliError::Config {
            field: field.to_string(),
            msg: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        CliError::Numeric(msg.into())
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Config { .. } => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { field, msg } => write!(f, "config error in {field}: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
            CliError::Numeric(msg) => write!(f, "numeric failure: {msg}"),
        }
    }
}

impl From<LibError> for CliError {
    fn from(e: LibError) -> Self {
        match e {
            LibError::Numeric(_) | LibError::AtomBudget { .. } | LibError::EmptyEvent => {
                CliError::numeric(e.to_string())
            }
            _ => CliError::data(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli) {
        Ok(summary) => {
            eprintln!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("supnorm-gof: {e}");
            ExitCode::from(e.code())
        }
    }
}

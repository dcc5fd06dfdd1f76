//! `hslope`: command-line front end for the h-slope experiments.
//!
//! Exit codes: 0 when every enabled check passes, 1 when a check fails,
//! 2 on a usage or configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use commands::{ExtractArgs, FormulasArgs, PalmArgs, SdeArgs, SinaiArgs, VerifyArgs};

#[derive(Debug, Parser)]
#[command(
    name = "hslope",
    version,
    about = "h-extrema and h-slopes of drifted Brownian motion"
)]
pub struct Cli {
    /// JSON file of settings for the chosen subcommand; flags given on the
    /// command line take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Where to write the JSON report (default: stdout).
    #[arg(long, global = true)]
    report: Option<PathBuf>,

    /// Leave the generation time out of the report.
    #[arg(long, global = true)]
    no_timestamp: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate closed-form laws.
    Formulas(FormulasArgs),
    /// Stream h-extrema out of a CSV time series.
    Extract(ExtractArgs),
    /// Monte Carlo battery of slope statistics against the closed forms.
    Verify(VerifyArgs),
    /// Conditioned diffusion: acceptance rates and sampler agreement.
    Sde(SdeArgs),
    /// Covering slope: direct simulation against the Palm construction.
    Palm(PalmArgs),
    /// Slopes of a random-environment potential against the Brownian laws.
    Sinai(SinaiArgs),
}

pub struct Globals {
    pub report: Option<PathBuf>,
    pub timestamp: bool,
}

fn run() -> anyhow::Result<bool> {
    let matches = Cli::command().get_matches();
    let cli = Cli::from_arg_matches(&matches)?;
    let file = cli.config.as_deref().map(config::load).transpose()?;
    let (name, sub) = matches.subcommand().expect("a subcommand is required");
    let globals = Globals {
        report: cli.report,
        timestamp: !cli.no_timestamp,
    };
    let file = file.as_ref();
    match cli.command {
        Command::Formulas(a) => commands::formulas(config::resolve(a, name, sub, file)?, &globals),
        Command::Extract(a) => commands::extract(config::resolve(a, name, sub, file)?, &globals),
        Command::Verify(a) => commands::verify(config::resolve(a, name, sub, file)?, &globals),
        Command::Sde(a) => commands::sde(config::resolve(a, name, sub, file)?, &globals),
        Command::Palm(a) => commands::palm(config::resolve(a, name, sub, file)?, &globals),
        Command::Sinai(a) => commands::sinai(config::resolve(a, name, sub, file)?, &globals),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            if let Some(clap_err) = e.downcast_ref::<clap::Error>() {
                let _ = clap_err.print();
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(2)
        }
    }
}

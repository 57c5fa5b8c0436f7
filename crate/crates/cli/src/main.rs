//! `snrflow`: schedule dumps, SNR density estimates and toy flow-matching
//! experiments from the command line.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{EvalArgs, PdfArgs, SampleArgs, ScheduleArgs, SweepArgs, TrainArgs};

#[derive(Debug, Parser)]
#[command(name = "snrflow", version, about = "Log-SNR density analysis and toy flow-matching training")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Master seed (default: the seed in --config if it is a manifest, else 0)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON config for the subcommand, or a manifest from an earlier run
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dump alpha, sigma and log-SNR of a schedule over a time grid
    Schedule(ScheduleArgs),
    /// Monte-Carlo estimate of the training-time log-SNR density
    Pdf(PdfArgs),
    /// Train one model per (target std, seed) and tabulate the final metric
    SweepStd(SweepArgs),
    /// Train a velocity MLP on a toy dataset
    Train(TrainArgs),
    /// Draw samples from a checkpoint by ODE integration
    Sample(SampleArgs),
    /// Distances between two point CSV files
    Eval(EvalArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<snrflow::Error>())
        .any(snrflow::Error::is_numerical);
    if numerical {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

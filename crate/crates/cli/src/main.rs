//! `scrl` — dataset generation, annotation, training, evaluation, and
//! ablation sweeps for the style-conditioned offline RL stack.

mod commands;
mod rundir;
mod settings;
mod sweep;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use scrl_core::Error;

#[derive(Parser)]
#[command(name = "scrl", version, about = "Style-conditioned offline RL toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scripted dataset.
    Generate(commands::GenerateArgs),
    /// Label a dataset with one style criterion.
    Annotate(commands::AnnotateArgs),
    /// Label-frequency table for one or all criteria.
    Histogram(commands::HistogramArgs),
    /// Train an agent on a labeled dataset.
    Train(commands::TrainArgs),
    /// Roll out a trained checkpoint and report alignment/return.
    Eval(commands::EvalArgs),
    /// Fan a family of training runs over a worker pool.
    Sweep(sweep::SweepArgs),
}

/// 0 success, 1 usage, 2 data error, 3 training divergence.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Diverged { .. } => 3,
                Error::Io { .. } | Error::Format { .. } => 2,
                Error::InvalidArgument(_) | Error::InvalidState(_) => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 2;
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return 1;
        }
    }
    1
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version are successful exits; everything else is a
            // usage error.
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Generate(args) => commands::run_generate(args),
        Command::Annotate(args) => commands::run_annotate(args),
        Command::Histogram(args) => commands::run_histogram(args),
        Command::Train(args) => commands::run_train(args),
        Command::Eval(args) => commands::run_eval(args),
        Command::Sweep(args) => sweep::run_sweep(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err) as i32);
    }
}

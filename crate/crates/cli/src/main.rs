//! `fpm`: dataset synthesis, reconstruction, training, evaluation, and
//! plot emission for the FPM toolkit.

mod commands;
mod error;
mod manifest;
mod png_io;

use clap::{Parser, Subcommand};

use crate::error::CliResult;

#[derive(Parser)]
#[command(name = "fpm", version, about = "Fourier ptychographic microscopy toolkit")]
struct Cli {
    /// Worker thread cap (env FPM_THREADS as fallback; default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset from amplitude/phase image directories.
    Simulate(commands::SimulateArgs),
    /// Reconstruct an object field from a measurement stack.
    Reconstruct(commands::ReconstructArgs),
    /// Train the unrolled network on a synthesized dataset.
    Train(commands::TrainArgs),
    /// Score reconstruction methods against ground truth.
    Eval(commands::EvalArgs),
    /// Render amplitude and phase PNGs from a complex field.
    Plot(commands::PlotArgs),
    /// Print the real-parameter count of a model configuration.
    ParamsCount(commands::ParamsCountArgs),
}

fn configure_threads(flag: Option<usize>) {
    let from_env = std::env::var("FPM_THREADS").ok().and_then(|v| v.parse::<usize>().ok());
    if let Some(n) = flag.or(from_env) {
        // Ignore failure: the global pool can only be set once (tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads(cli.threads);
    match cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::Reconstruct(args) => commands::reconstruct(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Plot(args) => commands::plot(args),
        Command::ParamsCount(args) => commands::params_count(args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}

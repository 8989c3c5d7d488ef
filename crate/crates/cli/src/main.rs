//! `wpse-lab`: command-line laboratory for weighted point set embeddings on
//! finite multimodal worlds.
//!
//! Every subcommand is deterministic given its flags: seeds are explicit,
//! artifacts are byte-stable across reruns, and each run directory carries a
//! manifest with content hashes (see `report`). Check-style commands exit
//! nonzero when any verification fails; error diagnostics go to stderr.

mod commands;
mod common;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "wpse-lab",
    version,
    about = "Numerical laboratory for weighted point set embeddings: \
             world generation, loss-bound verification, kernel similarity \
             training, rank ceilings, and capacity sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world (joint distribution, labels, partition).
    GenWorld(commands::gen_world::Args),
    /// Run the loss and excess-risk bound suites against fresh or given worlds.
    VerifyBounds(commands::verify_bounds::Args),
    /// Train a weighted point set model against a world's contrastive loss.
    Train(commands::train::Args),
    /// Verify the bilinear rank ceiling on random embedding triples.
    Rank(commands::rank::Args),
    /// Sweep point-set size M and trace approximation error against the bilinear floor.
    Sweep(commands::sweep::Args),
    /// Check random feature unbiasedness and variance scaling against closed forms.
    RffTest(commands::rff_test::Args),
    /// Summarize a run directory and verify its artifact hashes.
    Report(commands::report::Args),
}

/// Honors `WPSE_LAB_THREADS` as an upper bound on worker parallelism.
fn init_threads() {
    let Ok(raw) = std::env::var("WPSE_LAB_THREADS") else {
        return;
    };
    match raw.parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(err) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                eprintln!("warning: could not apply WPSE_LAB_THREADS: {err}");
            }
        }
        _ => eprintln!("warning: ignoring invalid WPSE_LAB_THREADS value {raw:?}"),
    }
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenWorld(args) => commands::gen_world::run(&args),
        Command::VerifyBounds(args) => commands::verify_bounds::run(&args),
        Command::Train(args) => commands::train::run(&args),
        Command::Rank(args) => commands::rank::run(&args),
        Command::Sweep(args) => commands::sweep::run(&args),
        Command::RffTest(args) => commands::rff_test::run(&args),
        Command::Report(args) => commands::report::run(&args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

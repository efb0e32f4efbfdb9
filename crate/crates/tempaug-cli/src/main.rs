//! `tempaug` — experiment driver for the training-dynamics laboratory.
//!
//! Every subcommand reads one self-contained TOML config, a checkpoint
//! store directory, and an output directory, and writes one primary CSV
//! plus one JSON sidecar. Exit codes: 0 success, 2 config error,
//! 3 missing data, 4 shape/dimension error, 5 numerical divergence.

mod commands;
mod config;
mod error;
mod output;

use clap::{Args, Parser, Subcommand};
use config::ExperimentConfig;
use error::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "tempaug", version, about = "Training-dynamics laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint store directory (created by `train`, read by the rest).
    #[arg(long)]
    store: PathBuf,
    /// Output directory for CSV/JSON artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Worker cap. Results are identical for any value; computation is
    /// seed-deterministic.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and persist its checkpoint trajectory.
    Train(CommonArgs),
    /// Dataset-level consistency matrix over an epoch grid.
    Consistency(CommonArgs),
    /// Forgetting or transferability sweep of composite networks.
    Sweep(CommonArgs),
    /// One-step SGD feature perturbations and their spectrum.
    Perturb(CommonArgs),
    /// Bootstrap sphericity test of the perturbation covariance.
    Isotropy(CommonArgs),
    /// Welch's t-test on two value files.
    Ttest(CommonArgs),
    /// Empirical feature-memory score and concentration check.
    Memory(CommonArgs),
    /// Generalization-gap vs TV + memory-slack bound check.
    Bound(CommonArgs),
    /// Class map of a 2-D latent plane through a deep head.
    Region(CommonArgs),
}

fn run(cmd: &Command) -> Result<(), CliError> {
    let (args, f): (&CommonArgs, fn(&ExperimentConfig, &std::path::Path, &std::path::Path) -> Result<(), CliError>) =
        match cmd {
            Command::Train(a) => (a, commands::cmd_train),
            Command::Consistency(a) => (a, commands::cmd_consistency),
            Command::Sweep(a) => (a, commands::cmd_sweep),
            Command::Perturb(a) => (a, commands::cmd_perturb),
            Command::Isotropy(a) => (a, commands::cmd_isotropy),
            Command::Ttest(a) => (a, commands::cmd_ttest),
            Command::Memory(a) => (a, commands::cmd_memory),
            Command::Bound(a) => (a, commands::cmd_bound),
            Command::Region(a) => (a, commands::cmd_region),
        };
    let config = ExperimentConfig::load(&args.config)?;
    f(&config, &args.store, &args.out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tempaug: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! Command-line experiment runner. Each subcommand drives one pipeline;
//! the config file's `kind` must match the subcommand it is passed to.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pift::config::{CliOverrides, ExperimentConfig, ExperimentKind};
use pift::experiment::{run_experiment, RunReport};
use pift::{PiftError, Result};

/// Samples Boltzmann field posteriors for differential-equation models and
/// infers physical parameters from sparse, noisy observations.
#[derive(Parser)]
#[command(name = "pift", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form Gaussian posterior of the screened free theory.
    Analytic(RunArgs),
    /// Langevin sampling of the field prior/posterior at fixed β.
    Forward(RunArgs),
    /// Nested Langevin inference of physical parameters.
    Inverse(RunArgs),
    /// Hamiltonian Monte Carlo on the exact-quadrature field posterior.
    Hmc(RunArgs),
    /// γ-grid of inverse runs, replicated over independent seeds.
    Sweep(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to a TOML or JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `output`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed (overrides the config's `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Restore the full-length chain counts from the config's `[full]`
    /// section (bundled configs default to short desk-scale runs).
    #[arg(long)]
    full: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.command {
        Command::Analytic(a) => (ExperimentKind::AnalyticKg, a),
        Command::Forward(a) => (ExperimentKind::ForwardSgld, a),
        Command::Inverse(a) => (ExperimentKind::InverseSgld, a),
        Command::Hmc(a) => (ExperimentKind::ForwardHmc, a),
        Command::Sweep(a) => (ExperimentKind::Sweep, a),
    };
    match run(kind, args) {
        Ok(report) => {
            println!(
                "wrote {} ({} chain{}, {:.2} s)",
                report.out_dir.display(),
                report.chains,
                if report.chains == 1 { "" } else { "s" },
                report.runtime_seconds
            );
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn run(kind: ExperimentKind, args: &RunArgs) -> Result<RunReport> {
    let mut cfg = ExperimentConfig::from_path(&args.config)?;
    if cfg.kind != kind {
        return Err(PiftError::InvalidConfig(format!(
            "kind: config `{}` declares `{}`, which belongs to the `{}` subcommand",
            args.config.display(),
            cfg.kind.as_str(),
            cfg.kind.subcommand()
        )));
    }
    cfg.apply_overrides(&CliOverrides {
        out: args.out.clone(),
        seed: args.seed,
        full: args.full,
    });
    cfg.resolve()?;
    run_experiment(&cfg)
}

//! Command-line front end for the experiment runner.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use moesim::experiment::{ExperimentKind, ExperimentSpec, RunOptions};
use moesim::metrics::BudgetInterpretation;

#[derive(Parser)]
#[command(name = "moesim", version, about = "Deterministic simulator for cacheless distributed MoE decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment spec and write its outputs.
    Run {
        /// Path to a TOML experiment spec.
        #[arg(long, value_name = "FILE")]
        spec: PathBuf,
        /// Directory to write summary, traces, and manifest into.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Worker threads for independent runs (default: one per core).
        #[arg(long, value_name = "N")]
        parallelism: Option<usize>,
        /// Which count the load-time budget multiplies the main-node term by.
        #[arg(long, value_enum, default_value_t = BudgetArg::Groups)]
        budget: BudgetArg,
    },
    /// Parse and validate a spec without running anything.
    Validate {
        /// Path to a TOML experiment spec.
        #[arg(long, value_name = "FILE")]
        spec: PathBuf,
    },
    /// List the available experiment kinds.
    ListExperiments,
}

/// The two readings of the load-time budget: scale by the number of worker
/// groups (loads overlap the other groups' compute) or by the group size.
#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum BudgetArg {
    Groups,
    GroupSize,
}

impl From<BudgetArg> for BudgetInterpretation {
    fn from(arg: BudgetArg) -> Self {
        match arg {
            BudgetArg::Groups => BudgetInterpretation::NumGroups,
            BudgetArg::GroupSize => BudgetInterpretation::GroupSize,
        }
    }
}

fn main() -> ExitCode {
    match run_command(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn run_command(command: Command) -> moesim::Result<()> {
    match command {
        Command::Run { spec, out, parallelism, budget } => {
            let parsed = ExperimentSpec::load(&spec)?;
            let opts = RunOptions {
                out_dir: out,
                parallelism,
                interpretation: budget.into(),
            };
            let summary = moesim::experiment::run(&parsed, &opts)?;
            println!(
                "{}: {} summary rows -> {}",
                parsed.experiment.kind.name(),
                summary.rows,
                summary.out_dir.display()
            );
            for file in &summary.files {
                println!("  {file}");
            }
            Ok(())
        }
        Command::Validate { spec } => {
            let parsed = ExperimentSpec::load(&spec)?;
            println!(
                "ok: {} ({} seeds)",
                parsed.experiment.kind.name(),
                parsed.experiment.seeds.len()
            );
            Ok(())
        }
        Command::ListExperiments => {
            for kind in ExperimentKind::ALL {
                println!("{:<18} {}", kind.name(), kind.describe());
            }
            Ok(())
        }
    }
}

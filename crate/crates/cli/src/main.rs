//! Experiment early-termination workflows: cohort simulation, policy
//! training, method evaluation, policy slicing, and one-off recommendations.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime/numeric error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;
use earlystop::Error;

#[derive(Parser)]
#[command(name = "earlystop", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a cohort of simulated experiments.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the contextual Q-network on a cohort.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate every configured method on a cohort and write the report.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        cohort: PathBuf,
        /// Trained policy checkpoint (required when methods include "rl").
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recommended actions over a 2-D grid of context/state perturbations.
    Slice {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        context: PathBuf,
        #[arg(long)]
        axes: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Print a machine-readable JSON grid to stdout.
        #[arg(long)]
        json: bool,
    },
    /// One recommendation for an observed experiment state.
    Recommend {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        context: PathBuf,
        #[arg(long)]
        observations: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

/// Validation failures exit 1; runtime and numeric failures exit 2.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig { .. }
        | Error::Domain { .. }
        | Error::UnknownMethod(_)
        | Error::UnknownField { .. }
        | Error::PolicyParse { .. }
        | Error::WeekOutOfRange { .. }
        | Error::ShapeMismatch { .. }
        | Error::MalformedTrajectory(_)
        | Error::DegenerateSchedule { .. }
        | Error::IllegalAction { .. } => 1,
        Error::Io { .. }
        | Error::Divergence { .. }
        | Error::GridCoverage { .. }
        | Error::NonBracketing { .. }
        | Error::PastHorizon { .. }
        | Error::Terminated
        | Error::EmptyOutcomes => 2,
    }
}

fn run(cli: Cli) -> earlystop::Result<()> {
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let cfg = RunConfig::load(&config)?.with_seed(seed);
            let path = commands::cmd_simulate(&cfg, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Train {
            config,
            cohort,
            out,
            seed,
        } => {
            let cfg = RunConfig::load(&config)?.with_seed(seed);
            let (policy, curve) = commands::cmd_train(&cfg, &cohort, &out)?;
            println!("wrote {}", policy.display());
            println!("wrote {}", curve.display());
        }
        Command::Evaluate {
            config,
            cohort,
            policy,
            out,
            seed,
        } => {
            let cfg = RunConfig::load(&config)?.with_seed(seed);
            let path = commands::cmd_evaluate(&cfg, &cohort, policy.as_deref(), &out)?;
            println!("wrote {}", path.display());
        }
        Command::Slice {
            policy,
            context,
            axes,
            out,
            json,
        } => {
            let rendered = commands::cmd_slice(&policy, &context, &axes, &out, json)?;
            print!("{rendered}");
        }
        Command::Recommend {
            policy,
            context,
            observations,
            json,
        } => {
            let rendered = commands::cmd_recommend(&policy, &context, &observations, json)?;
            print!("{rendered}");
            if json {
                println!();
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; bad usage is a
            // validation failure.
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

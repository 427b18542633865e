//! Command-line driver for the radar alignment pipeline.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 I/O error, 4 internal
//! invariant violation. Solver non-convergence is not an error; it is
//! reported in the optimization report.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::PipelineConfig;
use radalign::Error;

#[derive(Parser)]
#[command(
    name = "radalign",
    about = "Multi-drive radar pose alignment, mapping and evaluation",
    version
)]
struct Cli {
    /// Path to the pipeline config (TOML).
    #[arg(long, global = true, default_value = "radalign.toml")]
    config: PathBuf,

    /// Override a config value (`--set scene.corridor_length=250`);
    /// repeatable, applied in order.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Override the correlation method (grid|icp).
    #[arg(long, global = true)]
    method: Option<String>,

    /// Override the worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic fleet dataset.
    Generate,
    /// Sample pairs, correlate them and solve the pose graph.
    Align {
        /// Reuse an existing edges.csv instead of re-correlating.
        #[arg(long)]
        resume: bool,
    },
    /// Render aligned and unaligned occupancy rasters.
    Map,
    /// Compute MME, pose RMSE and lateral error metrics.
    Eval,
    /// Run generate, align, map and eval in sequence.
    Pipeline {
        #[arg(long)]
        resume: bool,
    },
}

fn run(cli: &Cli) -> radalign::Result<()> {
    let mut sets = cli.sets.clone();
    if let Some(m) = &cli.method {
        sets.push(format!("method={m}"));
    }
    if let Some(w) = cli.workers {
        sets.push(format!("workers={w}"));
    }
    let config = PipelineConfig::load(&cli.config, &sets)?;
    match cli.command {
        Command::Generate => commands::cmd_generate(&config),
        Command::Align { resume } => commands::cmd_align(&config, resume),
        Command::Map => commands::cmd_map(&config),
        Command::Eval => commands::cmd_eval(&config),
        Command::Pipeline { resume } => commands::cmd_pipeline(&config, resume),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Io(_) => 3,
                Error::NonFiniteResidual { .. } => 4,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

//! `d2ea`: generate data, train the two-stage surrogate and search it for the
//! most efficient modulation.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 out-of-range
//! input.

mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "d2ea", version, about = "Data-driven converter efficiency modeling and modulation search")]
pub struct Cli {
    /// Overrides the data and swarm seeds from the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// `key = value` file with [data], [oracle], [stage1], [stage2] and [pso] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Directory receiving every output file and the run manifest.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the simulation grid and the noisy experimental pool as CSV.
    Generate {
        /// Simulation grid size as D1xD2xP, e.g. 25x25x20.
        #[arg(long)]
        sim_grid: Option<String>,
        #[arg(long)]
        exp_count: Option<usize>,
    },
    /// Fit the stacked model and report its accuracy against both baselines.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// Model output path; defaults to `model.json` in the out dir.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Toggle::On)]
        baselines: Toggle,
        /// Grid-search stage-I structure on the simulation test split first.
        #[arg(long)]
        tune: bool,
    },
    /// Score a saved model on a labeled CSV file.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Search a saved model for the best (d1, d2) at one load.
    Optimize {
        #[arg(long)]
        model: PathBuf,
        /// Load in watts.
        #[arg(long)]
        power: f64,
    },
    /// Optimize at every load of a list (`600,1000`) or range (`200:2000:200`).
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "200:2000:200")]
        powers: String,
        /// Recompute hardware efficiency at each optimum from the oracle.
        #[arg(long)]
        oracle_check: bool,
    },
    /// Simulation-only vs experiment-only vs stacked accuracy, without saving a model.
    Compare {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Accuracy of the stack as the experimental training set shrinks.
    DataSizeSweep {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "0.1,0.25,0.5,1.0")]
        fractions: String,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
    },
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Simulation CSV; defaults to `sim.csv` in the out dir.
    #[arg(long)]
    pub sim: Option<PathBuf>,
    /// Experimental CSV; defaults to `exp.csv` in the out dir.
    #[arg(long)]
    pub exp: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

fn exit_code(err: &d2ea::Error) -> u8 {
    match err {
        d2ea::Error::Config(_) => 2,
        d2ea::Error::Range { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

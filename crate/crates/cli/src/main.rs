//! `fedscale`: run federated averaging experiments from a config file.
//!
//! Exit codes: 0 success, 1 runtime or check failure, 2 usage/config error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "fedscale", version, about = "Federated averaging client-scaling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key=value run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seed` from the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `out_dir` from the config file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for client training. Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write curve.csv and final.json.
    Train {
        #[command(flatten)]
        common: Common,
        /// Write measured per-round wall-clock seconds instead of 0.
        #[arg(long)]
        record_timing: bool,
    },
    /// Sweep the client counts in plan.clients and score each against the K=1 baseline.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        record_timing: bool,
    },
    /// Compare the model gradient against central finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Negative control: perturb the analytic gradient before comparing.
        #[arg(long)]
        corrupt_gradient: bool,
    },
    /// Merge the per-K curves of a sweep directory into one long-format CSV.
    ExportPlotdata {
        sweep_dir: PathBuf,
        /// Directory for plotdata.csv (default: the sweep directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn report(self) -> ExitCode {
        match self {
            Failure::Usage(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
            Failure::Runtime(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        }
    }
}

fn with_config(common: Common, run: impl FnOnce(&RunConfig) -> Result<(), Failure> + Send) -> Result<(), Failure> {
    let cfg = RunConfig::from_file(&common.config, common.seed, common.out).map_err(|e| Failure::Usage(e.into()))?;
    match common.threads {
        Some(0) => Err(Failure::Usage(anyhow::anyhow!("--threads must be positive"))),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Failure::Runtime(e.into()))?;
            pool.install(|| run(&cfg))
        }
        None => run(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { common, record_timing } => with_config(common, |c| commands::train(c, record_timing)),
        Command::Sweep { common, record_timing } => with_config(common, |c| commands::sweep(c, record_timing)),
        Command::Gradcheck {
            common,
            corrupt_gradient,
        } => with_config(common, |c| commands::gradcheck(c, corrupt_gradient)),
        Command::ExportPlotdata { sweep_dir, out } => commands::export_plotdata(&sweep_dir, out).map(|p| {
            println!("wrote {}", p.display());
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}

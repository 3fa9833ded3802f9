mod commands;
mod config;
mod failure;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use driftpatch::eval::RecoveryMode;

use commands::SweepKind;
use config::ExperimentConfig;
use failure::{Failure, EXIT_CONFIG, EXIT_RUNTIME};

#[derive(Parser)]
#[command(
    name = "driftpatch",
    version,
    about = "Neural-network patching experiments on drifting data streams"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed, overriding the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Recovery-speed reference, overriding the configuration.
    #[arg(long, value_parser = ["final", "predrift"])]
    recovery_mode: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build scenario streams and write them to the stream cache.
    GenStream {
        #[command(flatten)]
        common: Common,
    },
    /// Train (or reuse) base classifier checkpoints.
    TrainBase {
        #[command(flatten)]
        common: Common,
        /// Retrain even if a checkpoint exists.
        #[arg(long)]
        force: bool,
    },
    /// Prequential evaluation of all configured models.
    Run {
        #[command(flatten)]
        common: Common,
        /// Worker threads for independent (scenario, seed) cells.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Engagement-layer or patch-architecture sweep.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(value_enum)]
        kind: SweepKind,
    },
    /// Tables and top-1 counts for a results directory.
    Report {
        /// Directory containing summary JSON files.
        results_dir: PathBuf,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output = o.clone();
    }
    if let Some(m) = &common.recovery_mode {
        cfg.recovery_mode = m.parse::<RecoveryMode>().map_err(Failure::from_core)?;
    }
    let out = cfg.output.clone();
    Ok((cfg, out))
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::GenStream { common } => {
            let (cfg, out) = load(&common)?;
            commands::gen_stream(&cfg, &out)
        }
        Command::TrainBase { common, force } => {
            let (cfg, out) = load(&common)?;
            commands::train_base(&cfg, &out, force)
        }
        Command::Run { common, jobs } => {
            let (cfg, out) = load(&common)?;
            if commands::run(&cfg, &out, jobs)? {
                Ok(())
            } else {
                Err(Failure::runtime("some cells failed; see summary.json"))
            }
        }
        Command::Sweep { common, kind } => {
            let (cfg, out) = load(&common)?;
            commands::sweep(&cfg, &out, kind)
        }
        Command::Report { results_dir } => commands::report(&results_dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code.clamp(1, EXIT_RUNTIME) as u8)
        }
    }
}

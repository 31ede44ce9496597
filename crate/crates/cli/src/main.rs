mod config;
mod stages;
mod store;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::Config;
use crate::stages::Ctx;

/// Zero-shot temporal action localization, one pipeline stage at a time.
///
/// Every stage writes to `<run.root>/<stage>-<hash>`; re-running with the
/// same configuration is a no-op. Endpoint credentials are read from the
/// environment variable named by each endpoint's `api_key_env`.
#[derive(Parser)]
#[command(name = "zeal", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one configuration value, e.g. `--set localization.lambda=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Re-run the stage even if its output already exists.
    #[arg(long, global = true)]
    force: bool,

    /// Cap on concurrent videos (and in-flight backend requests).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate start/end/description queries for every class.
    GenQueries,
    /// Rank classes per video by embedding similarity.
    Filter {
        /// Also save the embedding answers as a replay file.
        #[arg(long)]
        record: bool,
    },
    /// Score every frame of every video for its selected classes.
    Score {
        /// Also save backend answers as replay files.
        #[arg(long)]
        record: bool,
    },
    /// Turn score files into detections.
    Localize {
        /// Write per-video, per-class timeline CSVs.
        #[arg(long)]
        emit_timeline: bool,
    },
    /// Compute mAP tables for all classes and for the zero-shot splits.
    Evaluate,
    /// Localize and evaluate over a grid of one parameter.
    Sweep {
        /// `lambda` or `sigma`.
        #[arg(long)]
        param: String,
        /// Inclusive grid `start:stop:step`.
        #[arg(long)]
        grid: String,
    },
    /// Generate a synthetic dataset: annotations, queries and score files.
    Synth {
        /// Write here instead of the hashed stage directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = Config::load(cli.config.as_deref(), &cli.overrides)?;
    let ctx = Ctx::new(cfg, cli.jobs, cli.force);
    match cli.command {
        Command::GenQueries => stages::gen_queries(&ctx),
        Command::Filter { record } => stages::filter(&ctx, record),
        Command::Score { record } => stages::score(&ctx, record),
        Command::Localize { emit_timeline } => stages::localize(&ctx, emit_timeline),
        Command::Evaluate => stages::evaluate_stage(&ctx),
        Command::Sweep { param, grid } => stages::sweep_stage(&ctx, &param, &grid),
        Command::Synth { out } => stages::synth(&ctx, out),
    }
}

/// 2 when the failure came from a model backend, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let backend = err
        .chain()
        .filter_map(|e| e.downcast_ref::<zeal_core::Error>())
        .any(zeal_core::Error::is_backend);
    if backend {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use sdrl_cli::config::RunConfig;

/// Riccati-based feedback synthesis and neural feedback surrogates.
#[derive(Parser)]
#[command(name = "sdrl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Path to the JSON run configuration.
    #[arg(long, global = true, default_value = "config.json")]
    config: PathBuf,
    /// Override the training seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Size of the worker pool for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample states and solve the pointwise Riccati problems into a dataset.
    Gen,
    /// Train the configured network on the run's dataset.
    Train,
    /// Score a checkpoint against fresh solves on a held-out grid.
    Eval,
    /// Integrate the closed loop under each configured controller.
    Simulate,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()?;
    }
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.training.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    match cli.command {
        Command::Gen => sdrl_cli::cmd_gen(&cfg),
        Command::Train => sdrl_cli::cmd_train(&cfg),
        Command::Eval => sdrl_cli::cmd_eval(&cfg),
        Command::Simulate => sdrl_cli::cmd_simulate(&cfg),
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use srh_cli::{cmd_all, cmd_embed, cmd_eval, cmd_gen, cmd_probe, cmd_segment, cmd_train, init_threads, Overrides, RunConfig};

/// Patch-based SRH classification pipeline on a synthetic cohort.
#[derive(Parser)]
#[command(name = "srh", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run config; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// ce, simclr or supcon.
    #[arg(long, global = true)]
    objective: Option<String>,
    /// Overrides every component seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Single-threaded numeric paths.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write the synthetic cohort, its manifest and the patient split.
    Gen,
    /// Train the feature extractor with one objective.
    Train,
    /// Fit a linear probe on frozen features.
    Probe,
    /// Evaluate on held-out patients.
    Eval,
    /// Probability heatmaps for one slide.
    Segment,
    /// tSNE scatter of held-out patch features.
    Embed,
    /// Every step for all three objectives.
    All,
}

fn run(cli: Cli) -> Result<()> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = base.resolve(&Overrides {
        objective: cli.objective,
        seed: cli.seed,
        out: cli.out,
        deterministic: cli.deterministic,
    })?;
    init_threads(cfg.deterministic)?;
    match cli.command {
        Command::Gen => {
            cmd_gen(&cfg)?;
        }
        Command::Train => println!("{}", cmd_train(&cfg)?.display()),
        Command::Probe => println!("{}", cmd_probe(&cfg)?.display()),
        Command::Eval => {
            cmd_eval(&cfg)?;
        }
        Command::Segment => println!("{}", serde_json::to_string_pretty(&cmd_segment(&cfg)?)?),
        Command::Embed => println!("{}", serde_json::to_string_pretty(&cmd_embed(&cfg)?)?),
        Command::All => println!("{}", cmd_all(&cfg)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

// SPDX-License-Identifier: MIT OR Apache-2.0

//! `affectscope`: command-line driver for the emotion-processing
//! interpretability experiments.

mod commands;
mod config;
mod context;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::LoadedConfig;
use crate::context::Context;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "affectscope", version, about = "Emotion-processing interpretability experiments")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Fail the audit if any Set B stimulus is keyword-visible.
    #[arg(long, global = true)]
    strict: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Replace every analysis seed with this value.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Stop extraction after this many new stimuli.
    #[arg(long, global = true)]
    max_new: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lexicon audit of every stimulus set.
    Audit,
    /// Extract and cache activations for every stimulus set.
    Extract,
    /// Layer-wise probes, transfer and frozen scoring.
    Probe,
    /// Activation patching.
    Patch,
    /// Layer-wise sublayer knockout.
    Knockout,
    /// Representational geometry and attention analyses.
    Geometry,
    /// Power simulation for the cross-topic permutation test.
    Power,
    /// Every stage from audit to report.
    Pipeline,
    /// Collect section metrics, optionally diffed against another run.
    Report {
        run_dir: PathBuf,
        other_run_dir: Option<PathBuf>,
    },
}

fn context(cli: &Cli) -> Result<Context, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required for this subcommand".into()))?;
    let mut cfg = LoadedConfig::load(path)?;
    if let Some(seed) = cli.seed_override {
        cfg.override_seeds(seed);
    }
    Context::new(cfg, cli.out.clone())
}

fn execute(cli: &Cli) -> Result<Vec<String>, CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    }
    if let Command::Report { run_dir, other_run_dir } = &cli.command {
        return Ok(vec![commands::report::run(run_dir, other_run_dir.as_deref(), cli.out.as_deref())?]);
    }
    let ctx = context(cli)?;
    let message = match &cli.command {
        Command::Audit => commands::audit::run(&ctx, cli.strict)?,
        Command::Extract => commands::extract::run(&ctx, cli.max_new)?,
        Command::Probe => commands::probe::run(&ctx)?,
        Command::Patch => commands::patch::run(&ctx)?,
        Command::Knockout => commands::knockout::run(&ctx)?,
        Command::Geometry => commands::geometry::run(&ctx)?,
        Command::Power => commands::power::run(&ctx)?,
        Command::Pipeline => {
            return Ok(vec![
                commands::audit::run(&ctx, cli.strict)?,
                commands::extract::run(&ctx, cli.max_new)?,
                commands::probe::run(&ctx)?,
                commands::patch::run(&ctx)?,
                commands::knockout::run(&ctx)?,
                commands::geometry::run(&ctx)?,
                commands::power::run(&ctx)?,
                commands::report::run(&ctx.out, None, None)?,
            ])
        }
        Command::Report { .. } => unreachable!("handled above"),
    };
    Ok(vec![message])
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(messages) => {
            for m in messages {
                println!("{m}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("affectscope: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

//! `sensornoise`: calibrate a sensor's noise model from flat/bias/dark stacks,
//! synthesize paired low-light data, and train, tune and run the
//! rectified-flow restorer.
//!
//! Every run writes a manifest with its resolved configuration, seed and
//! SHA-256 digests of all inputs and outputs. Exit codes: 0 success, 1 I/O,
//! 2 validation, 3 numerical failure.

mod commands;
mod config;
mod error;
mod manifest;
mod pairs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{Map, Value};

use crate::commands::{Ctx, Outcome};
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;

#[derive(Parser)]
#[command(name = "sensornoise", version, about = "Sensor noise calibration, synthesis and flow-based restoration")]
struct Cli {
    /// Seed for every random draw; drawn at random (and recorded) when absent.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// JSON config file; flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate per-pixel noise parameters from flat, bias and dark stacks.
    Calibrate(commands::calibrate::CalibrateArgs),
    /// Synthesize noisy/clean pairs from clean frames and a parameter file.
    Synthesize(commands::synthesize::SynthesizeArgs),
    /// Normal probability-plot correlation of a stack's temporal samples.
    Ppcc(commands::calibrate::PpccArgs),
    /// Train a velocity field on noisy/clean pairs.
    RfTrain(commands::flow::TrainArgs),
    /// Search the second sampling step on validation pairs.
    RfSearch(commands::flow::SearchArgs),
    /// Restore noisy frames with a trained field.
    RfInfer(commands::flow::InferArgs),
    /// PSNR/SSIM between reference and test frames.
    Metrics(commands::metrics::MetricsArgs),
}

fn seed_and_threads(cli: &Cli, file: Option<&Map<String, Value>>) -> CliResult<(u64, String, Option<usize>)> {
    let file_u64 = |key: &str| -> CliResult<Option<u64>> {
        match file.and_then(|f| f.get(key)) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(Some)
                .ok_or_else(|| CliError::invalid(format!("config `{key}` must be a non-negative integer"))),
        }
    };
    let (seed, source) = match (cli.seed, file_u64("seed")?) {
        (Some(s), _) => (s, "flag"),
        (None, Some(s)) => (s, "config"),
        (None, None) => (rand::random::<u64>(), "drawn"),
    };
    let threads = match cli.threads {
        Some(t) => Some(t),
        None => file_u64("threads")?.map(|t| t as usize),
    };
    Ok((seed, source.to_string(), threads))
}

fn run(cli: Cli) -> CliResult<()> {
    let file = cli.config.as_deref().map(config::load_file).transpose()?;
    let (seed, seed_source, threads) = seed_and_threads(&cli, file.as_ref())?;
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::invalid(format!("thread pool: {e}")))?;
    }
    let ctx = Ctx {
        seed,
        file: file.as_ref(),
    };
    let (name, outcome): (&str, Outcome) = match cli.command {
        Command::Calibrate(a) => ("calibrate", commands::calibrate::calibrate(&a, &ctx)?),
        Command::Synthesize(a) => ("synthesize", commands::synthesize::synthesize(&a, &ctx)?),
        Command::Ppcc(a) => ("ppcc", commands::calibrate::ppcc(&a, &ctx)?),
        Command::RfTrain(a) => ("rf-train", commands::flow::train(&a, &ctx)?),
        Command::RfSearch(a) => ("rf-search", commands::flow::search(&a, &ctx)?),
        Command::RfInfer(a) => ("rf-infer", commands::flow::infer(&a, &ctx)?),
        Command::Metrics(a) => ("metrics", commands::metrics::metrics(&a, &ctx)?),
    };
    let m = Manifest {
        command: name.to_string(),
        config: outcome.config,
        seed,
        seed_source,
        version: env!("CARGO_PKG_VERSION").to_string(),
        inputs: outcome.inputs.digests()?,
        outputs: outcome.outputs.digests()?,
    };
    manifest::write(&m, &outcome.manifest_path)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

//! Benchmark harness CLI: Monte-Carlo NMSE sweeps over the configured
//! channel estimators, written as a sorted CSV of per-trial records with an
//! aggregate table on stdout.
//!
//! `chanest simulate` runs one experiment; `chanest hwi-sweep` repeats it
//! across receiver/transmitter distortion levels derived from quantizer bit
//! widths, plus an ideal baseline. Settings resolve in three layers: a named
//! preset, then an optional config file, then command-line flags.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use chanest::harness::{
    apply_config_file, run_experiment, run_hwi_sweep, write_csv, EstimatorKind, ExperimentConfig,
    HarnessError, RunOutput,
};

#[derive(Debug, Parser)]
#[command(
    name = "chanest",
    version,
    about = "Channel-estimation NMSE benchmarks for a surface-assisted uplink"
)]
struct Cli {
    #[command(subcommand)]
    command: CommandKind,
}

#[derive(Debug, Subcommand)]
enum CommandKind {
    /// Run the configured experiment and write one CSV of NMSE records.
    Simulate(RunArgs),
    /// Re-run the experiment per quantizer bit width plus an ideal arm.
    HwiSweep(SweepArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Config file of key=value lines, applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Built-in starting point: `desk` (default) or `paper`.
    #[arg(long, default_value = "desk")]
    preset: String,

    /// SNR grid in dB, comma separated (e.g. 0,5,10,15).
    #[arg(long, value_delimiter = ',')]
    snr: Option<Vec<f64>>,

    /// Number of Monte-Carlo trials.
    #[arg(long)]
    trials: Option<usize>,

    /// Estimators to run, comma separated: ls, lmmse, dip, onoff.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,

    /// Master seed for all random draws.
    #[arg(long)]
    seed: Option<u64>,

    /// Output CSV path (defaults to the config's `out` entry).
    #[arg(long)]
    out: Option<String>,

    /// Worker thread count; trials fan out across threads. Results are
    /// identical at any count because every draw is derived per trial.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,

    /// Quantizer bit widths for the impaired arms, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    bits: Vec<u32>,
}

/// Build the effective config from preset, file, and flags, in that order.
fn resolve_config(args: &RunArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut config = match args.preset.as_str() {
        "desk" => ExperimentConfig::desk(),
        "paper" => ExperimentConfig::paper(),
        other => {
            return Err(HarnessError::InvalidConfig(format!(
                "unknown preset `{other}` (expected desk or paper)"
            )))
        }
    };
    if let Some(path) = &args.config {
        apply_config_file(&mut config, path)?;
    }
    if let Some(snr) = &args.snr {
        config.snr_db = snr.clone();
    }
    if let Some(trials) = args.trials {
        config.trials = trials;
    }
    if let Some(names) = &args.estimators {
        config.estimators = names
            .iter()
            .map(|name| EstimatorKind::parse(name).map_err(HarnessError::InvalidConfig))
            .collect::<Result<_, _>>()?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.out = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn init_threads(threads: Option<usize>) -> Result<(), HarnessError> {
    let Some(n) = threads else { return Ok(()) };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| HarnessError::InvalidConfig(format!("thread pool: {e}")))
}

/// Print the aggregate table in fixed-width columns.
fn print_aggregates(output: &RunOutput) {
    println!(
        "{:<14} {:>7} {:<10} {:>12} {:>12} {:>7}",
        "estimator", "snr_db", "metric", "mean_nmse", "ci95_half", "samples"
    );
    for row in &output.aggregates {
        println!(
            "{:<14} {:>7} {:<10} {:>12.6e} {:>12.6e} {:>7}",
            row.estimator,
            row.snr_db,
            row.metric_mode.as_str(),
            row.mean_nmse,
            row.ci_half_width,
            row.samples
        );
    }
}

fn finish(output: &RunOutput, out_path: &str, started: Instant) -> Result<(), HarnessError> {
    write_csv(&output.records, out_path.as_ref())?;
    print_aggregates(output);
    eprintln!(
        "wrote {} records to {} in {:.1}s",
        output.records.len(),
        out_path,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<(), HarnessError> {
    let started = Instant::now();
    match &cli.command {
        CommandKind::Simulate(args) => {
            let config = resolve_config(args)?;
            init_threads(args.threads)?;
            let output = run_experiment(&config)?;
            finish(&output, &config.out, started)
        }
        CommandKind::HwiSweep(args) => {
            let config = resolve_config(&args.run)?;
            init_threads(args.run.threads)?;
            let output = run_hwi_sweep(&config, &args.bits)?;
            finish(&output, &config.out, started)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(inner) = source {
                eprintln!("  caused by: {inner}");
                source = inner.source();
            }
            if err.is_config_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

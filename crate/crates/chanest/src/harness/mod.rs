//! Experiment harness: configuration, Monte-Carlo orchestration, estimator
//! sweeps, and CSV persistence.
//!
//! A run is described by an [`ExperimentConfig`] (scenario dimensions,
//! impairments, SNR grid, estimator list, denoiser settings). For every
//! trial the runner derives per-purpose random streams from `(master seed,
//! trial)`, synthesizes one training frame per reflection protocol, runs
//! each configured estimator on the identical received data, and records
//! per-user NMSE under both metrics. Trials are embarrassingly parallel and
//! the derived-stream discipline makes results independent of worker
//! scheduling; records are sorted canonically before writing, so a fixed
//! config and seed produce a byte-identical CSV.
//!
//! The hardware-impairment sweep repeats the experiment across
//! quantization-derived distortion levels with matched seeds, tagging
//! estimator names with `@b<bits>` / `@ideal` so one record set holds the
//! whole comparison.

mod config;
mod io;
mod runner;
pub mod stats;

pub use config::{EstimatorKind, ExperimentConfig, HarnessError, MetricChoice};
pub use io::{
    apply_config_file, apply_config_text, config_text, read_config, sort_records, write_config,
    write_csv,
};
pub use runner::{
    aggregate, run_experiment, run_hwi_sweep, run_labeled, AggregateRow, MetricMode, NmseRecord,
    RunOutput,
};

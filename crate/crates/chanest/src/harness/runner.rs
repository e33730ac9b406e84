//! Monte-Carlo orchestration: paired estimator comparisons over trials and
//! SNR points, and the hardware-impairment sweep.

use std::sync::atomic::{AtomicUsize, Ordering};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::channel::ChannelModel;
use crate::dip::{denoise, DipConfig};
use crate::estimators::{
    interpolate_subcarriers, lmmse_filter, ls_pilot_estimate, nmse_dg, nmse_effective,
    onoff_estimate, unmix, ChannelEstimate, CovarianceSet,
};
use crate::frame::{
    kappa_from_bits, synth_received, zadoff_chu, FrameStreams, ImpairmentConfig, PilotPlan,
    ReflectionPattern, SynthParams, TrainingFrame,
};
use crate::linalg::derive_seed;

use super::config::{EstimatorKind, ExperimentConfig, HarnessError, MetricChoice};
use super::io::sort_records;
use super::stats::{mean, mean_ci_half_width};

/// Which NMSE definition a record carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricMode {
    /// NMSE over the stacked `[D G]` coefficient block.
    DgBlock,
    /// NMSE on the recombined effective channel across training symbols.
    Effective,
}

impl MetricMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricMode::DgBlock => "dg_block",
            MetricMode::Effective => "effective",
        }
    }
}

/// One NMSE measurement. Users are numbered from 1 in records and CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct NmseRecord {
    pub estimator: String,
    pub snr_db: f64,
    pub user: usize,
    pub trial: usize,
    pub metric_mode: MetricMode,
    pub nmse: f64,
}

/// Mean NMSE and 95% half-width over all (user, trial) samples of one
/// (estimator, SNR, metric) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub estimator: String,
    pub snr_db: f64,
    pub metric_mode: MetricMode,
    pub mean_nmse: f64,
    pub ci_half_width: f64,
    pub samples: usize,
}

/// Result of one experiment run: per-measurement records (canonically
/// sorted) plus the aggregate table.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub records: Vec<NmseRecord>,
    pub aggregates: Vec<AggregateRow>,
}

impl RunOutput {
    /// Mean NMSE of one aggregate cell, if present.
    pub fn mean_nmse(&self, estimator: &str, snr_db: f64, mode: MetricMode) -> Option<f64> {
        self.aggregates
            .iter()
            .find(|a| a.estimator == estimator && a.snr_db == snr_db && a.metric_mode == mode)
            .map(|a| a.mean_nmse)
    }

    /// Per-trial NMSE samples of one cell, averaged over users, ordered by
    /// trial index — the paired samples for sign tests.
    pub fn trial_series(&self, estimator: &str, snr_db: f64, mode: MetricMode) -> Vec<f64> {
        let mut by_trial: std::collections::BTreeMap<usize, (f64, usize)> = Default::default();
        for r in &self.records {
            if r.estimator == estimator && r.snr_db == snr_db && r.metric_mode == mode {
                let e = by_trial.entry(r.trial).or_insert((0.0, 0));
                e.0 += r.nmse;
                e.1 += 1;
            }
        }
        by_trial.values().map(|(sum, n)| sum / *n as f64).collect()
    }
}

/// Zadoff-Chu pilot sequences, one per user: the u-th root coprime with the
/// pilot count, so the sequences stay unit-modulus and valid for any N_p.
fn pilot_sequences(config: &ExperimentConfig) -> Result<Vec<Vec<Complex64>>, HarnessError> {
    let np = config.pilots_per_user;
    let gcd = |mut a: usize, mut b: usize| {
        while b != 0 {
            (a, b) = (b, a % b);
        }
        a
    };
    let mut roots = (1usize..).filter(|&r| gcd(r, np) == 1);
    (0..config.users)
        .map(|_| {
            let root = roots.next().expect("coprime roots are unbounded");
            Ok(zadoff_chu(root, config.pilots_per_user)?)
        })
        .collect()
}

/// LMMSE covariance oracle for the run. The tap model is stationary across
/// subcarriers, so the per-tone covariance is tone-independent: estimate it
/// once at tone 0 and replicate over every pilot tone.
fn build_covariance(
    config: &ExperimentConfig,
    model: &ChannelModel,
    pattern: &ReflectionPattern,
    pilots: &PilotPlan,
) -> CovarianceSet {
    let base = CovarianceSet::estimate(model, pattern, &[0], config.cov_trials, config.seed);
    let mut tones: Vec<usize> = (0..config.users)
        .flat_map(|u| pilots.tones(u).to_vec())
        .collect();
    tones.sort_unstable();
    tones.dedup();
    let symbols = pattern.symbols();
    let cov = (0..config.users)
        .map(|u| {
            tones
                .iter()
                .map(|_| (0..symbols).map(|t| base.get(u, 0, t).clone()).collect())
                .collect()
        })
        .collect();
    CovarianceSet::from_matrices(tones, cov)
}

struct TrialContext<'a> {
    config: &'a ExperimentConfig,
    model: &'a ChannelModel,
    pattern: &'a ReflectionPattern,
    onoff_pattern: Option<&'a ReflectionPattern>,
    pilots: &'a PilotPlan,
    pilot_symbols: &'a [Vec<Complex64>],
    cov: Option<&'a CovarianceSet>,
    suffix: &'a str,
}

fn synth_frame(
    ctx: &TrialContext,
    pattern: &ReflectionPattern,
    noise_var: f64,
    trial: usize,
) -> Result<TrainingFrame, HarnessError> {
    // Streams are re-derived per (trial, pattern, SNR) call, so every frame
    // of a trial reuses the identical channel realization and unit noise
    // draws: estimator and SNR comparisons are paired by construction.
    let mut streams = FrameStreams::derive(ctx.config.seed, trial as u64);
    let params = SynthParams {
        model: ctx.model,
        pattern,
        pilots: ctx.pilots,
        pilot_symbols: ctx.pilot_symbols,
        noise_var,
        impairments: ImpairmentConfig {
            kappa_ue: ctx.config.kappa_ue,
            kappa_bs: ctx.config.kappa_bs,
            phase_noise_delta: ctx.config.phase_noise_delta,
        },
    };
    Ok(synth_received(&params, &mut streams)?)
}

fn run_trial(ctx: &TrialContext, trial: usize) -> Result<Vec<NmseRecord>, HarnessError> {
    let config = ctx.config;
    let n_sub = config.subcarriers;
    let mut records = Vec::new();
    let wrap = |kind: EstimatorKind, snr_db: f64| {
        move |e: HarnessError| HarnessError::TrialFailure {
            trial,
            estimator: kind.name().to_string(),
            snr_db,
            source: Box::new(e),
        }
    };

    for &snr_db in &config.snr_db {
        let noise_var = 10f64.powf(-snr_db / 10.0);
        let snr_lin = 10f64.powf(snr_db / 10.0);
        let frame = synth_frame(ctx, ctx.pattern, noise_var, trial)?;
        let onoff_frame = match ctx.onoff_pattern {
            Some(p) => Some(synth_frame(ctx, p, noise_var, trial)?),
            None => None,
        };

        for user in 0..config.users {
            let sparse =
                ls_pilot_estimate(&frame.received, ctx.pilots, user, &ctx.pilot_symbols[user]);
            let ls_grid = interpolate_subcarriers(&sparse, n_sub, config.interp)
                .map_err(|e| wrap(EstimatorKind::Ls, snr_db)(e.into()))?;

            for &kind in &config.estimators {
                let chain = || -> Result<(ChannelEstimate, &TrainingFrame, &ReflectionPattern), HarnessError> {
                    match kind {
                        EstimatorKind::Ls => {
                            Ok((unmix(&ls_grid, ctx.pattern)?, &frame, ctx.pattern))
                        }
                        EstimatorKind::Lmmse => {
                            let covs = ctx.cov.expect("covariance set built for lmmse runs");
                            let filtered = lmmse_filter(
                                &sparse,
                                covs,
                                user,
                                snr_lin,
                                config.kappa_ue,
                                config.kappa_bs,
                            )?;
                            let grid = interpolate_subcarriers(&filtered, n_sub, config.interp)?;
                            Ok((unmix(&grid, ctx.pattern)?, &frame, ctx.pattern))
                        }
                        EstimatorKind::Dip => {
                            let seed = derive_seed(
                                config.seed,
                                (trial as u64) << 16 | user as u64,
                                "dip",
                            );
                            let dip_cfg = DipConfig { seed, ..config.dip.clone() };
                            let (denoised, _) = denoise(&ls_grid, &dip_cfg)?;
                            Ok((unmix(&denoised, ctx.pattern)?, &frame, ctx.pattern))
                        }
                        EstimatorKind::OnoffLs => {
                            let of = onoff_frame.as_ref().expect("onoff frame synthesized");
                            let pattern = ctx.onoff_pattern.expect("onoff pattern built");
                            let sp = ls_pilot_estimate(
                                &of.received,
                                ctx.pilots,
                                user,
                                &ctx.pilot_symbols[user],
                            );
                            let grid = interpolate_subcarriers(&sp, n_sub, config.interp)?;
                            Ok((onoff_estimate(&grid, pattern)?, of, pattern))
                        }
                    }
                };
                let (estimate, truth_frame, est_pattern) = chain().map_err(wrap(kind, snr_db))?;

                let truth = &truth_frame.realization.users[user];
                let name = format!("{}{}", kind.name(), ctx.suffix);
                if matches!(
                    config.metric_mode,
                    MetricChoice::DgBlock | MetricChoice::Both
                ) {
                    let nmse =
                        nmse_dg(truth, &estimate).map_err(|e| wrap(kind, snr_db)(e.into()))?;
                    records.push(NmseRecord {
                        estimator: name.clone(),
                        snr_db,
                        user: user + 1,
                        trial,
                        metric_mode: MetricMode::DgBlock,
                        nmse,
                    });
                }
                if matches!(
                    config.metric_mode,
                    MetricChoice::Effective | MetricChoice::Both
                ) {
                    let nmse = nmse_effective(
                        &truth_frame.nominal_effective[user],
                        &estimate,
                        est_pattern,
                    )
                    .map_err(|e| wrap(kind, snr_db)(e.into()))?;
                    records.push(NmseRecord {
                        estimator: name,
                        snr_db,
                        user: user + 1,
                        trial,
                        metric_mode: MetricMode::Effective,
                        nmse,
                    });
                }
            }
        }
    }
    Ok(records)
}

/// Run the configured experiment: one channel realization per trial, all
/// estimators on the same frames, records for every (estimator, SNR, user,
/// trial, metric) cell plus the aggregate table.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    run_labeled(config, "")
}

/// `run_experiment` with a suffix appended to every estimator name, so
/// sweeps over impairment settings stay distinguishable in one record set.
pub fn run_labeled(config: &ExperimentConfig, suffix: &str) -> Result<RunOutput, HarnessError> {
    config.validate()?;
    let model = config.build_model()?;
    let pattern = config.build_pattern();
    let pilots = PilotPlan::new(config.subcarriers, config.pilots_per_user, config.users)?;
    let pilot_symbols = pilot_sequences(config)?;
    let onoff_pattern = config
        .estimators
        .contains(&EstimatorKind::OnoffLs)
        .then(|| ReflectionPattern::on_off(config.subsurfaces));
    let cov = config
        .estimators
        .contains(&EstimatorKind::Lmmse)
        .then(|| build_covariance(config, &model, &pattern, &pilots));

    let ctx = TrialContext {
        config,
        model: &model,
        pattern: &pattern,
        onoff_pattern: onoff_pattern.as_ref(),
        pilots: &pilots,
        pilot_symbols: &pilot_symbols,
        cov: cov.as_ref(),
        suffix,
    };

    let done = AtomicUsize::new(0);
    let total = config.trials;
    let progress_step = (total / 10).max(1);
    let per_trial: Result<Vec<Vec<NmseRecord>>, HarnessError> = (0..total)
        .into_par_iter()
        .map(|trial| {
            let recs = run_trial(&ctx, trial)?;
            let finished = done.fetch_add(1, Ordering::Relaxed) + 1;
            if finished % progress_step == 0 || finished == total {
                eprintln!("  [run{}] trial {}/{}", suffix, finished, total);
            }
            Ok(recs)
        })
        .collect();

    let mut records: Vec<NmseRecord> = per_trial?.into_iter().flatten().collect();
    sort_records(&mut records);
    let aggregates = aggregate(&records);
    Ok(RunOutput {
        records,
        aggregates,
    })
}

/// Aggregate per (estimator, snr, metric) cell.
pub fn aggregate(records: &[NmseRecord]) -> Vec<AggregateRow> {
    let mut keys: Vec<(&str, f64, MetricMode)> = Vec::new();
    for r in records {
        let key = (r.estimator.as_str(), r.snr_db, r.metric_mode);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.sort_by(|a, b| {
        a.0.cmp(b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.as_str().cmp(b.2.as_str()))
    });
    keys.into_iter()
        .map(|(est, snr, mode)| {
            let samples: Vec<f64> = records
                .iter()
                .filter(|r| r.estimator == est && r.snr_db == snr && r.metric_mode == mode)
                .map(|r| r.nmse)
                .collect();
            AggregateRow {
                estimator: est.to_string(),
                snr_db: snr,
                metric_mode: mode,
                mean_nmse: mean(&samples),
                ci_half_width: mean_ci_half_width(&samples),
                samples: samples.len(),
            }
        })
        .collect()
}

/// Run the experiment once per quantization bit width (kappa_ue = kappa_bs =
/// kappa_from_bits(b), estimator names suffixed `@b<b>`) plus the ideal
/// kappa=0 baseline (suffix `@ideal`), all with the same master seed so the
/// settings are trial-paired.
pub fn run_hwi_sweep(config: &ExperimentConfig, bits: &[u32]) -> Result<RunOutput, HarnessError> {
    if bits.is_empty() {
        return Err(HarnessError::InvalidConfig(
            "hwi sweep needs a nonempty bit list".into(),
        ));
    }
    let mut ideal = config.clone();
    ideal.kappa_ue = 0.0;
    ideal.kappa_bs = 0.0;
    let mut out = run_labeled(&ideal, "@ideal")?;

    for &b in bits {
        let kappa = kappa_from_bits(b);
        let mut impaired = config.clone();
        impaired.kappa_ue = kappa;
        impaired.kappa_bs = kappa;
        let arm = run_labeled(&impaired, &format!("@b{b}"))?;
        out.records.extend(arm.records);
        out.aggregates.extend(arm.aggregates);
    }
    sort_records(&mut out.records);
    out.aggregates.sort_by(|a, b| {
        a.estimator
            .cmp(&b.estimator)
            .then(a.snr_db.total_cmp(&b.snr_db))
            .then(a.metric_mode.as_str().cmp(b.metric_mode.as_str()))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::io::write_csv;

    // A deliberately small scenario so runner tests stay fast: one user, two
    // BS antennas, a 2x2 surface at element level, 16 subcarriers.
    fn tiny_config() -> ExperimentConfig {
        let mut config = ExperimentConfig::desk();
        config.users = 1;
        config.bs_antennas = 2;
        config.ris_elements = 4;
        config.subsurfaces = 4;
        config.subcarriers = 16;
        config.pilots_per_user = 4;
        config.training_symbols = 5;
        config.ue_horizontal_m = vec![52.0];
        config.ue_vertical_m = vec![2.0];
        config.snr_db = vec![10.0];
        config.trials = 3;
        config.cov_trials = 200;
        config.estimators = vec![EstimatorKind::Ls];
        config.metric_mode = MetricChoice::Both;
        config.dip = DipConfig {
            hidden_layers: 3,
            width: 4,
            schedule: vec![(2, 5), (1, 1)],
            input_size: (8, 1),
            iterations: 20,
            ..config.dip.clone()
        };
        config
    }

    // --- exactness ---

    #[test]
    fn ls_is_exact_without_noise_or_interpolation() {
        // Pilots on every tone and an SNR high enough that noise is below
        // the assertion threshold: LS + unmix must reproduce the channel.
        let mut config = tiny_config();
        config.pilots_per_user = 16;
        config.snr_db = vec![200.0];
        config.trials = 2;
        let out = run_experiment(&config).unwrap();
        assert_eq!(out.records.len(), 2 * 2); // 2 trials x 2 metrics
        for r in &out.records {
            assert!(r.nmse < 1e-10, "record {r:?} not exact");
        }
    }

    // --- reproducibility ---

    #[test]
    fn reruns_are_byte_identical() {
        let config = tiny_config();
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        assert_eq!(a.records, b.records);

        let dir = tempfile::tempdir().unwrap();
        let pa = dir.path().join("a.csv");
        let pb = dir.path().join("b.csv");
        write_csv(&a.records, &pa).unwrap();
        write_csv(&b.records, &pb).unwrap();
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    }

    #[test]
    fn trial_records_do_not_depend_on_trial_count() {
        let mut short = tiny_config();
        short.trials = 3;
        let mut long = tiny_config();
        long.trials = 5;
        let a = run_experiment(&short).unwrap();
        let b = run_experiment(&long).unwrap();
        for r in &a.records {
            assert!(b.records.contains(r), "missing {r:?} in longer run");
        }
    }

    #[test]
    fn ls_records_do_not_depend_on_estimator_list() {
        let alone = tiny_config();
        let mut crowd = tiny_config();
        crowd.estimators = vec![
            EstimatorKind::Ls,
            EstimatorKind::Lmmse,
            EstimatorKind::OnoffLs,
        ];
        let a = run_experiment(&alone).unwrap();
        let b = run_experiment(&crowd).unwrap();
        let ls_only: Vec<&NmseRecord> = b.records.iter().filter(|r| r.estimator == "ls").collect();
        assert_eq!(ls_only.len(), a.records.len());
        for (x, y) in a.records.iter().zip(ls_only) {
            assert_eq!(x, y);
        }
    }

    // --- aggregation ---

    #[test]
    fn aggregates_match_record_means() {
        let mut config = tiny_config();
        config.estimators = vec![EstimatorKind::Ls, EstimatorKind::OnoffLs];
        let out = run_experiment(&config).unwrap();
        for row in &out.aggregates {
            let samples: Vec<f64> = out
                .records
                .iter()
                .filter(|r| {
                    r.estimator == row.estimator
                        && r.snr_db == row.snr_db
                        && r.metric_mode == row.metric_mode
                })
                .map(|r| r.nmse)
                .collect();
            assert_eq!(samples.len(), row.samples);
            let mean = samples.iter().sum::<f64>() / samples.len() as f64;
            assert!((mean - row.mean_nmse).abs() < 1e-12);
        }
        // users x trials samples per cell, one cell per estimator/metric.
        assert_eq!(out.aggregates.len(), 4);
        assert!(out.aggregates.iter().all(|row| row.samples == 3));
    }

    #[test]
    fn trial_series_is_ordered_and_user_averaged() {
        let mut config = tiny_config();
        config.trials = 4;
        let out = run_experiment(&config).unwrap();
        let series = out.trial_series("ls", 10.0, MetricMode::DgBlock);
        assert_eq!(series.len(), 4);
        for (trial, value) in series.iter().enumerate() {
            let expected: Vec<f64> = out
                .records
                .iter()
                .filter(|r| {
                    r.trial == trial && r.estimator == "ls" && r.metric_mode == MetricMode::DgBlock
                })
                .map(|r| r.nmse)
                .collect();
            assert_eq!(expected.len(), 1);
            assert_eq!(*value, expected[0]);
        }
    }

    // --- hardware-impairment sweep ---

    #[test]
    fn sweep_ideal_arm_reduces_to_plain_run() {
        let config = tiny_config();
        let plain = run_experiment(&config).unwrap();
        let sweep = run_hwi_sweep(&config, &[2]).unwrap();

        let ideal: Vec<&NmseRecord> = sweep
            .records
            .iter()
            .filter(|r| r.estimator.ends_with("@ideal"))
            .collect();
        assert_eq!(ideal.len(), plain.records.len());
        for (x, y) in plain.records.iter().zip(ideal) {
            assert_eq!(format!("{}@ideal", x.estimator), y.estimator);
            assert_eq!(x.snr_db, y.snr_db);
            assert_eq!(x.user, y.user);
            assert_eq!(x.trial, y.trial);
            assert_eq!(x.nmse, y.nmse);
        }
        // The impaired arm exists and is strictly worse on average.
        let b2 = sweep.mean_nmse("ls@b2", 10.0, MetricMode::DgBlock).unwrap();
        let id = sweep
            .mean_nmse("ls@ideal", 10.0, MetricMode::DgBlock)
            .unwrap();
        assert!(b2 > id, "impaired {b2} not above ideal {id}");
    }

    #[test]
    fn sweep_requires_bits() {
        let config = tiny_config();
        let err = run_hwi_sweep(&config, &[]).unwrap_err();
        assert!(err.is_config_error());
    }
}

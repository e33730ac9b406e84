//! Experiment configuration: scenario parameters, presets, and validation.

use crate::channel::{
    ChannelError, ChannelModel, ChannelModelParams, ScenarioGeometry, PL_EXPONENT_DIRECT,
    PL_EXPONENT_RIS_SIDE,
};
use crate::dip::{DipConfig, DipError, DipNetwork};
use crate::estimators::{EstimatorError, InterpMethod};
use crate::frame::{FrameError, PatternKind, ReflectionPattern};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {reason}")]
    BadValue {
        line: usize,
        key: String,
        reason: String,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Dip(#[from] DipError),
    #[error("trial {trial}, estimator {estimator}, snr {snr_db} dB: {source}")]
    TrialFailure {
        trial: usize,
        estimator: String,
        snr_db: f64,
        #[source]
        source: Box<HarnessError>,
    },
}

impl HarnessError {
    /// True for errors that describe a bad configuration (CLI exit code 2)
    /// rather than a runtime failure (exit code 1).
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            HarnessError::UnknownKey { .. }
                | HarnessError::BadValue { .. }
                | HarnessError::InvalidConfig(_)
        )
    }
}

/// Estimators the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    /// LS at the pilot tones + subcarrier interpolation + pattern unmixing.
    Ls,
    /// Distortion-aware LMMSE filtering of the LS pilot estimate.
    Lmmse,
    /// Deep-image-prior denoising of the interpolated LS grid.
    Dip,
    /// LS under the ON/OFF (switched sub-surface) protocol.
    OnoffLs,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::Ls => "ls",
            EstimatorKind::Lmmse => "lmmse",
            EstimatorKind::Dip => "dip",
            EstimatorKind::OnoffLs => "onoff",
        }
    }

    pub fn parse(s: &str) -> Result<Self, String> {
        match s {
            "ls" => Ok(EstimatorKind::Ls),
            "lmmse" => Ok(EstimatorKind::Lmmse),
            "dip" => Ok(EstimatorKind::Dip),
            "onoff" => Ok(EstimatorKind::OnoffLs),
            other => Err(format!(
                "unknown estimator `{other}` (expected ls, lmmse, dip, onoff)"
            )),
        }
    }
}

/// Which NMSE metric(s) to record per estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricChoice {
    DgBlock,
    Effective,
    Both,
}

impl MetricChoice {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricChoice::DgBlock => "dg_block",
            MetricChoice::Effective => "effective",
            MetricChoice::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Result<Self, String> {
        match s {
            "dg_block" => Ok(MetricChoice::DgBlock),
            "effective" => Ok(MetricChoice::Effective),
            "both" => Ok(MetricChoice::Both),
            other => Err(format!(
                "unknown metric mode `{other}` (expected dg_block, effective, both)"
            )),
        }
    }
}

/// Complete description of one experiment: scenario, impairments, sweep
/// axes, estimator list, and denoiser settings. Serialized as line-oriented
/// `key=value` text by the harness I/O functions.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Number of UEs (U).
    pub users: usize,
    /// BS antennas (K).
    pub bs_antennas: usize,
    /// Total RIS elements (must be a perfect square).
    pub ris_elements: usize,
    /// Sub-surfaces / phase-shifter groups (M).
    pub subsurfaces: usize,
    /// OFDM subcarriers (N).
    pub subcarriers: usize,
    /// Pilot tones per user (N_p).
    pub pilots_per_user: usize,
    /// Training symbols per frame (T); pattern-based estimation needs M+1.
    pub training_symbols: usize,
    /// Delay spread (max delay index) of the direct link.
    pub taps_direct: usize,
    /// Delay spread of the UE-RIS link.
    pub taps_ue_ris: usize,
    /// Delay spread of the RIS-BS link.
    pub taps_ris_bs: usize,
    /// Horizontal BS-RIS distance in meters.
    pub bs_ris_distance_m: f64,
    /// Per-UE horizontal distance from the BS, meters.
    pub ue_horizontal_m: Vec<f64>,
    /// Per-UE perpendicular offset, meters.
    pub ue_vertical_m: Vec<f64>,
    pub carrier_ghz: f64,
    /// BS Toeplitz correlation factor r.
    pub bs_correlation: f64,
    /// Rescale link gains to unit mean direct gain (receiver-referenced SNR).
    pub normalize_gains: bool,
    /// Model individual RIS elements and aggregate into sub-surfaces.
    pub element_level: bool,
    /// Reflection pattern for the pattern-based estimators.
    pub pattern: PatternKind,
    /// Subcarrier interpolation used on pilot estimates.
    pub interp: InterpMethod,
    /// UE transmit distortion proportionality factor.
    pub kappa_ue: f64,
    /// BS receive distortion proportionality factor.
    pub kappa_bs: f64,
    /// RIS phase-noise half-width (radians).
    pub phase_noise_delta: f64,
    /// SNR grid in dB.
    pub snr_db: Vec<f64>,
    /// Monte-Carlo trials.
    pub trials: usize,
    /// Master seed; all per-trial streams derive from it.
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    /// Which NMSE metric(s) to emit per estimate.
    pub metric_mode: MetricChoice,
    /// Realizations for the LMMSE covariance oracle.
    pub cov_trials: usize,
    /// Denoiser settings; the seed field is a base that the runner re-derives
    /// per (trial, user).
    pub dip: DipConfig,
    /// Output CSV path for the CLI.
    pub out: String,
}

impl ExperimentConfig {
    /// Full-scale preset matching the reference scenario: 4 UEs, 32 BS
    /// antennas, a 15x15 RIS grouped into 15 sub-surfaces, 64 subcarriers
    /// with 16 pilots per user, 16 training symbols, delay spreads
    /// (6, 2, 5), 6 GHz carrier, r=0.7, 50 m BS-RIS distance.
    pub fn paper() -> Self {
        ExperimentConfig {
            users: 4,
            bs_antennas: 32,
            ris_elements: 225,
            subsurfaces: 15,
            subcarriers: 64,
            pilots_per_user: 16,
            training_symbols: 16,
            taps_direct: 6,
            taps_ue_ris: 2,
            taps_ris_bs: 5,
            bs_ris_distance_m: 50.0,
            ue_horizontal_m: vec![52.0, 53.0, 51.0, 52.0],
            ue_vertical_m: vec![2.0, 3.0, 2.0, 3.0],
            carrier_ghz: 6.0,
            bs_correlation: 0.7,
            normalize_gains: true,
            element_level: true,
            pattern: PatternKind::Dft,
            interp: InterpMethod::Linear,
            kappa_ue: 0.0,
            kappa_bs: 0.0,
            phase_noise_delta: 0.0,
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            trials: 100,
            seed: 1,
            estimators: vec![
                EstimatorKind::Ls,
                EstimatorKind::Lmmse,
                EstimatorKind::Dip,
                EstimatorKind::OnoffLs,
            ],
            metric_mode: MetricChoice::Both,
            cov_trials: 1000,
            dip: DipConfig::paper(0),
            out: "results.csv".to_string(),
        }
    }

    /// Reduced scenario with the same structure at a fraction of the cost:
    /// 2 UEs, 8 antennas, a 4x4 RIS in 4 sub-surfaces, 32 subcarriers with
    /// 8 pilots per user, 5 training symbols, single-tap delay spreads, and
    /// the small denoiser. Used by the fast experiment suite.
    pub fn desk() -> Self {
        ExperimentConfig {
            users: 2,
            bs_antennas: 8,
            ris_elements: 16,
            subsurfaces: 4,
            subcarriers: 32,
            pilots_per_user: 8,
            training_symbols: 5,
            taps_direct: 1,
            taps_ue_ris: 1,
            taps_ris_bs: 1,
            bs_ris_distance_m: 50.0,
            ue_horizontal_m: vec![52.0, 53.0],
            ue_vertical_m: vec![2.0, 3.0],
            carrier_ghz: 6.0,
            bs_correlation: 0.7,
            normalize_gains: true,
            element_level: true,
            pattern: PatternKind::Dft,
            interp: InterpMethod::Linear,
            kappa_ue: 0.0,
            kappa_bs: 0.0,
            phase_noise_delta: 0.0,
            snr_db: vec![0.0, 5.0, 10.0, 15.0],
            trials: 50,
            seed: 1,
            estimators: vec![
                EstimatorKind::Ls,
                EstimatorKind::Lmmse,
                EstimatorKind::Dip,
                EstimatorKind::OnoffLs,
            ],
            metric_mode: MetricChoice::Both,
            cov_trials: 1000,
            dip: DipConfig::desk(0),
            out: "results.csv".to_string(),
        }
    }

    /// Cross-field validation; every failure is a configuration error.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::InvalidConfig(msg));
        if self.users == 0 {
            return fail("need at least one user".into());
        }
        if self.ue_horizontal_m.len() != self.users || self.ue_vertical_m.len() != self.users {
            return fail(format!(
                "distance lists have {} / {} entries for {} users",
                self.ue_horizontal_m.len(),
                self.ue_vertical_m.len(),
                self.users
            ));
        }
        let side = (self.ris_elements as f64).sqrt().round() as usize;
        if side * side != self.ris_elements {
            return fail(format!(
                "ris_elements={} is not a perfect square",
                self.ris_elements
            ));
        }
        if self.subsurfaces == 0 || self.ris_elements % self.subsurfaces != 0 {
            return fail(format!(
                "{} elements cannot split into {} sub-surfaces",
                self.ris_elements, self.subsurfaces
            ));
        }
        if self.training_symbols != self.subsurfaces + 1 {
            return fail(format!(
                "pattern-based estimation needs T = M+1 training symbols, got T={} for M={}",
                self.training_symbols, self.subsurfaces
            ));
        }
        if self.pilots_per_user < 2 || self.pilots_per_user > self.subcarriers {
            return fail(format!(
                "pilots_per_user={} outside 2..={}",
                self.pilots_per_user, self.subcarriers
            ));
        }
        let spacing = self.subcarriers / self.pilots_per_user;
        if self.users > spacing {
            return fail(format!(
                "{} users exceed the {} disjoint comb offsets of N={}, N_p={}",
                self.users, spacing, self.subcarriers, self.pilots_per_user
            ));
        }
        if matches!(self.pattern, PatternKind::Custom) {
            return fail("custom patterns cannot be configured from text".into());
        }
        if self.snr_db.is_empty() {
            return fail("snr_db list is empty".into());
        }
        if self.trials == 0 {
            return fail("trials must be at least 1".into());
        }
        if self.estimators.is_empty() {
            return fail("estimator list is empty".into());
        }
        if self.kappa_ue < 0.0 || self.kappa_bs < 0.0 || self.phase_noise_delta < 0.0 {
            return fail("impairment factors must be nonnegative".into());
        }
        if self.estimators.contains(&EstimatorKind::Lmmse) && self.cov_trials < 100 {
            return fail(format!(
                "cov_trials={} too small for the covariance oracle",
                self.cov_trials
            ));
        }
        if self.estimators.contains(&EstimatorKind::Dip) {
            // Dry-build the network so schedule/width mistakes surface as
            // configuration errors, not mid-run failures.
            DipNetwork::new(
                &self.dip,
                2 * self.bs_antennas,
                (self.subcarriers, self.training_symbols),
            )
            .map_err(|e| HarnessError::InvalidConfig(format!("dip: {e}")))?;
        }
        Ok(())
    }

    /// Instantiate the channel model for this scenario.
    pub fn build_model(&self) -> Result<ChannelModel, HarnessError> {
        let side = (self.ris_elements as f64).sqrt().round() as usize;
        let geometry = ScenarioGeometry {
            bs_antennas: self.bs_antennas,
            ris_side: side,
            subsurfaces: self.subsurfaces,
            bs_ris_distance_m: self.bs_ris_distance_m,
            ue_horizontal_m: self.ue_horizontal_m.clone(),
            ue_vertical_m: self.ue_vertical_m.clone(),
            carrier_ghz: self.carrier_ghz,
            bs_correlation_factor: self.bs_correlation,
            pl_exponent_ris: PL_EXPONENT_RIS_SIDE,
            pl_exponent_direct: PL_EXPONENT_DIRECT,
        };
        let params = ChannelModelParams {
            geometry,
            subcarriers: self.subcarriers,
            taps_direct: self.taps_direct,
            taps_ue_ris: self.taps_ue_ris,
            taps_ris_bs: self.taps_ris_bs,
            element_level: self.element_level,
            normalize_gains: self.normalize_gains,
        };
        Ok(ChannelModel::new(params)?)
    }

    /// Reflection pattern used by the pattern-based estimators.
    pub fn build_pattern(&self) -> ReflectionPattern {
        match self.pattern {
            PatternKind::OnOff => ReflectionPattern::on_off(self.subsurfaces),
            // Custom is rejected by validate(); default to the DFT design.
            _ => ReflectionPattern::dft(self.subsurfaces),
        }
    }
}

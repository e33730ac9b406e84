//! Line-oriented config files and the results CSV.

use std::fmt::Write as _;
use std::path::Path;

use crate::dip::DipConfig;
use crate::estimators::InterpMethod;
use crate::frame::PatternKind;

use super::config::{EstimatorKind, ExperimentConfig, HarnessError, MetricChoice};
use super::runner::NmseRecord;

/// Read a config file on top of the desk-preset defaults: every key is
/// optional, `#` starts a comment, and unknown keys are rejected with their
/// line number.
pub fn read_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let mut config = ExperimentConfig::desk();
    apply_config_file(&mut config, path)?;
    Ok(config)
}

/// Apply `key=value` lines from `path` onto an existing config.
pub fn apply_config_file(config: &mut ExperimentConfig, path: &Path) -> Result<(), HarnessError> {
    let text = std::fs::read_to_string(path)?;
    apply_config_text(config, &text)
}

/// Apply config lines from an in-memory string (same syntax as the file
/// form; errors carry 1-based line numbers within `text`).
pub fn apply_config_text(config: &mut ExperimentConfig, text: &str) -> Result<(), HarnessError> {
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| HarnessError::BadValue {
            line: line_no,
            key: line.to_string(),
            reason: "expected key=value".to_string(),
        })?;
        apply_key(config, key.trim(), value.trim(), line_no)?;
    }
    Ok(())
}

fn bad(line: usize, key: &str, reason: impl ToString) -> HarnessError {
    HarnessError::BadValue {
        line,
        key: key.to_string(),
        reason: reason.to_string(),
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, HarnessError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| bad(line, key, e))
}

fn parse_list<T: std::str::FromStr>(
    line: usize,
    key: &str,
    value: &str,
) -> Result<Vec<T>, HarnessError>
where
    T::Err: std::fmt::Display,
{
    value
        .split(',')
        .map(|p| parse_num::<T>(line, key, p.trim()))
        .collect()
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool, HarnessError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(bad(
            line,
            key,
            format!("expected true/false, got `{other}`"),
        )),
    }
}

/// Parse "AxB" into a pair of integers (upsample factors, input size).
fn parse_pair(line: usize, key: &str, value: &str) -> Result<(usize, usize), HarnessError> {
    let (a, b) = value
        .split_once('x')
        .ok_or_else(|| bad(line, key, format!("expected RxC, got `{value}`")))?;
    Ok((
        parse_num(line, key, a.trim())?,
        parse_num(line, key, b.trim())?,
    ))
}

fn apply_key(
    config: &mut ExperimentConfig,
    key: &str,
    value: &str,
    line: usize,
) -> Result<(), HarnessError> {
    match key {
        "users" => config.users = parse_num(line, key, value)?,
        "bs_antennas" => config.bs_antennas = parse_num(line, key, value)?,
        "ris_elements" => config.ris_elements = parse_num(line, key, value)?,
        "subsurfaces" => config.subsurfaces = parse_num(line, key, value)?,
        "subcarriers" => config.subcarriers = parse_num(line, key, value)?,
        "pilots_per_user" => config.pilots_per_user = parse_num(line, key, value)?,
        "training_symbols" => config.training_symbols = parse_num(line, key, value)?,
        "taps_direct" => config.taps_direct = parse_num(line, key, value)?,
        "taps_ue_ris" => config.taps_ue_ris = parse_num(line, key, value)?,
        "taps_ris_bs" => config.taps_ris_bs = parse_num(line, key, value)?,
        "bs_ris_distance_m" => config.bs_ris_distance_m = parse_num(line, key, value)?,
        "ue_horizontal_m" => config.ue_horizontal_m = parse_list(line, key, value)?,
        "ue_vertical_m" => config.ue_vertical_m = parse_list(line, key, value)?,
        "carrier_ghz" => config.carrier_ghz = parse_num(line, key, value)?,
        "bs_correlation" => config.bs_correlation = parse_num(line, key, value)?,
        "normalize_gains" => config.normalize_gains = parse_bool(line, key, value)?,
        "element_level" => config.element_level = parse_bool(line, key, value)?,
        "pattern" => {
            config.pattern = match value {
                "dft" => PatternKind::Dft,
                "onoff" => PatternKind::OnOff,
                other => return Err(bad(line, key, format!("unknown pattern `{other}`"))),
            }
        }
        "interp" => {
            config.interp = match value {
                "linear" => InterpMethod::Linear,
                "spline" => InterpMethod::CubicSpline,
                other => return Err(bad(line, key, format!("unknown method `{other}`"))),
            }
        }
        "kappa_ue" => config.kappa_ue = parse_num(line, key, value)?,
        "kappa_bs" => config.kappa_bs = parse_num(line, key, value)?,
        "phase_noise_delta" => config.phase_noise_delta = parse_num(line, key, value)?,
        "snr_db" => config.snr_db = parse_list(line, key, value)?,
        "trials" => config.trials = parse_num(line, key, value)?,
        "seed" => config.seed = parse_num(line, key, value)?,
        "estimators" => {
            config.estimators = value
                .split(',')
                .map(|p| EstimatorKind::parse(p.trim()).map_err(|e| bad(line, key, e)))
                .collect::<Result<_, _>>()?;
        }
        "metric_mode" => {
            config.metric_mode = MetricChoice::parse(value).map_err(|e| bad(line, key, e))?;
        }
        "cov_trials" => config.cov_trials = parse_num(line, key, value)?,
        "dip_hidden_layers" => config.dip.hidden_layers = parse_num(line, key, value)?,
        "dip_width" => config.dip.width = parse_num(line, key, value)?,
        "dip_schedule" => {
            config.dip.schedule = value
                .split(',')
                .map(|p| parse_pair(line, key, p.trim()))
                .collect::<Result<_, _>>()?;
        }
        "dip_input_size" => config.dip.input_size = parse_pair(line, key, value)?,
        "dip_iterations" => config.dip.iterations = parse_num(line, key, value)?,
        "dip_learning_rate" => config.dip.learning_rate = parse_num(line, key, value)?,
        "dip_beta1" => config.dip.beta1 = parse_num(line, key, value)?,
        "dip_beta2" => config.dip.beta2 = parse_num(line, key, value)?,
        "dip_epsilon" => config.dip.epsilon = parse_num(line, key, value)?,
        "dip_input_amplitude" => config.dip.input_amplitude = parse_num(line, key, value)?,
        "dip_seed" => config.dip.seed = parse_num(line, key, value)?,
        "out" => config.out = value.to_string(),
        other => {
            return Err(HarnessError::UnknownKey {
                line,
                key: other.to_string(),
            });
        }
    }
    Ok(())
}

fn join<T: std::fmt::Display>(values: &[T]) -> String {
    values
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Serialize every field as `key=value` lines; `read_config` of the result
/// reproduces the config exactly.
pub fn write_config(config: &ExperimentConfig, path: &Path) -> Result<(), HarnessError> {
    std::fs::write(path, config_text(config))?;
    Ok(())
}

pub fn config_text(config: &ExperimentConfig) -> String {
    let pattern = match config.pattern {
        PatternKind::OnOff => "onoff",
        _ => "dft",
    };
    let interp = match config.interp {
        InterpMethod::Linear => "linear",
        InterpMethod::CubicSpline => "spline",
    };
    let estimators = config
        .estimators
        .iter()
        .map(|e| e.name().to_string())
        .collect::<Vec<_>>()
        .join(",");
    let DipConfig {
        hidden_layers,
        width,
        schedule,
        input_size,
        iterations,
        learning_rate,
        beta1,
        beta2,
        epsilon,
        input_amplitude,
        seed: dip_seed,
    } = &config.dip;
    let schedule_text = schedule
        .iter()
        .map(|(r, c)| format!("{r}x{c}"))
        .collect::<Vec<_>>()
        .join(",");

    let mut s = String::from("# chanest experiment configuration\n");
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k}={v}");
    };
    kv("users", config.users.to_string());
    kv("bs_antennas", config.bs_antennas.to_string());
    kv("ris_elements", config.ris_elements.to_string());
    kv("subsurfaces", config.subsurfaces.to_string());
    kv("subcarriers", config.subcarriers.to_string());
    kv("pilots_per_user", config.pilots_per_user.to_string());
    kv("training_symbols", config.training_symbols.to_string());
    kv("taps_direct", config.taps_direct.to_string());
    kv("taps_ue_ris", config.taps_ue_ris.to_string());
    kv("taps_ris_bs", config.taps_ris_bs.to_string());
    kv("bs_ris_distance_m", config.bs_ris_distance_m.to_string());
    kv("ue_horizontal_m", join(&config.ue_horizontal_m));
    kv("ue_vertical_m", join(&config.ue_vertical_m));
    kv("carrier_ghz", config.carrier_ghz.to_string());
    kv("bs_correlation", config.bs_correlation.to_string());
    kv("normalize_gains", config.normalize_gains.to_string());
    kv("element_level", config.element_level.to_string());
    kv("pattern", pattern.to_string());
    kv("interp", interp.to_string());
    kv("kappa_ue", config.kappa_ue.to_string());
    kv("kappa_bs", config.kappa_bs.to_string());
    kv("phase_noise_delta", config.phase_noise_delta.to_string());
    kv("snr_db", join(&config.snr_db));
    kv("trials", config.trials.to_string());
    kv("seed", config.seed.to_string());
    kv("estimators", estimators);
    kv("metric_mode", config.metric_mode.as_str().to_string());
    kv("cov_trials", config.cov_trials.to_string());
    kv("dip_hidden_layers", hidden_layers.to_string());
    kv("dip_width", width.to_string());
    kv("dip_schedule", schedule_text);
    kv(
        "dip_input_size",
        format!("{}x{}", input_size.0, input_size.1),
    );
    kv("dip_iterations", iterations.to_string());
    kv("dip_learning_rate", learning_rate.to_string());
    kv("dip_beta1", beta1.to_string());
    kv("dip_beta2", beta2.to_string());
    kv("dip_epsilon", epsilon.to_string());
    kv("dip_input_amplitude", input_amplitude.to_string());
    kv("dip_seed", dip_seed.to_string());
    kv("out", config.out.clone());
    s
}

/// Canonical record ordering for CSV output and merges.
pub fn sort_records(records: &mut [NmseRecord]) {
    records.sort_by(|a, b| {
        a.estimator
            .cmp(&b.estimator)
            .then(a.snr_db.total_cmp(&b.snr_db))
            .then(a.user.cmp(&b.user))
            .then(a.trial.cmp(&b.trial))
            .then(a.metric_mode.as_str().cmp(b.metric_mode.as_str()))
    });
}

/// Write records as CSV with the fixed column set
/// `estimator,snr_db,user,trial,metric_mode,nmse`, LF line endings, rows in
/// canonical order.
pub fn write_csv(records: &[NmseRecord], path: &Path) -> Result<(), HarnessError> {
    let mut sorted: Vec<NmseRecord> = records.to_vec();
    sort_records(&mut sorted);
    let mut s = String::from("estimator,snr_db,user,trial,metric_mode,nmse\n");
    for r in &sorted {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.estimator,
            r.snr_db,
            r.user,
            r.trial,
            r.metric_mode.as_str(),
            r.nmse
        );
    }
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::runner::MetricMode;

    fn record(est: &str, snr: f64, user: usize, trial: usize, nmse: f64) -> NmseRecord {
        NmseRecord {
            estimator: est.to_string(),
            snr_db: snr,
            user,
            trial,
            metric_mode: MetricMode::DgBlock,
            nmse,
        }
    }

    // --- config files ---

    #[test]
    fn config_write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        let mut config = ExperimentConfig::paper();
        config.snr_db = vec![0.0, 2.5, 10.0];
        config.kappa_ue = 0.0025000000000000005; // 0.05^2 as stored
        config.estimators = vec![EstimatorKind::Dip, EstimatorKind::Ls];
        config.dip.learning_rate = 0.003;
        config.out = "sweep.csv".to_string();
        write_config(&config, &path).unwrap();
        let back = read_config(&path).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn unknown_keys_are_rejected_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        std::fs::write(&path, "# comment\ntrials=3\nspam=1\n").unwrap();
        match read_config(&path).unwrap_err() {
            HarnessError::UnknownKey { line, key } => {
                assert_eq!(line, 3);
                assert_eq!(key, "spam");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        std::fs::write(
            &path,
            "\n# full line comment\ntrials=7   # trailing comment\n\n",
        )
        .unwrap();
        let config = read_config(&path).unwrap();
        assert_eq!(config.trials, 7);
    }

    #[test]
    fn malformed_lines_carry_their_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        std::fs::write(&path, "trials=2\nnot a key value line\n").unwrap();
        match read_config(&path).unwrap_err() {
            HarnessError::BadValue { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn bad_values_name_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        std::fs::write(&path, "trials=many\n").unwrap();
        match read_config(&path).unwrap_err() {
            HarnessError::BadValue { line, key, .. } => {
                assert_eq!(line, 1);
                assert_eq!(key, "trials");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    // --- csv ---

    #[test]
    fn empty_record_set_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_csv(&[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "estimator,snr_db,user,trial,metric_mode,nmse\n");
    }

    #[test]
    fn three_records_make_a_four_line_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        let records = vec![
            record("ls", 0.0, 1, 0, 0.25),
            record("ls", 0.0, 1, 1, 0.5),
            record("dip", 0.0, 1, 0, 0.125),
        ];
        write_csv(&records, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "estimator,snr_db,user,trial,metric_mode,nmse");
        // Sorted: dip before ls, then by trial.
        assert_eq!(lines[1], "dip,0,1,0,dg_block,0.125");
        assert_eq!(lines[2], "ls,0,1,0,dg_block,0.25");
        assert_eq!(lines[3], "ls,0,1,1,dg_block,0.5");
        assert!(!text.contains('\r'));
    }

    #[test]
    fn rows_sort_by_all_keys() {
        let mut records = vec![
            record("ls", 5.0, 1, 0, 0.1),
            record("ls", 0.0, 2, 0, 0.2),
            record("ls", 0.0, 1, 0, 0.3),
        ];
        records[0].metric_mode = MetricMode::Effective;
        sort_records(&mut records);
        assert_eq!(records[0].nmse, 0.3);
        assert_eq!(records[1].nmse, 0.2);
        assert_eq!(records[2].nmse, 0.1);
    }
}

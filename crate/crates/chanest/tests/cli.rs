//! End-to-end checks of the `chanest` binary: flag handling, exit codes
//! (0 success, 2 config error, 1 runtime failure), and the artifacts it
//! leaves behind.

use std::path::Path;
use std::process::{Command, Output};

fn chanest(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chanest"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn simulate_writes_csv_and_prints_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let out = chanest(
        &[
            "simulate",
            "--preset",
            "desk",
            "--trials",
            "1",
            "--snr",
            "10",
            "--estimators",
            "ls",
            "--threads",
            "1",
            "--out",
            "r.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));

    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("estimator"), "aggregate table header");
    assert!(stdout.contains("ls"), "aggregate row for the estimator");

    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    assert!(csv.starts_with("estimator,snr_db,user,trial,metric_mode,nmse\n"));
    // 1 trial x 2 users x both metric modes, plus the header.
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.cfg"),
        "trials = 1\nestimators = ls\nmetric_mode = dg_block\n",
    )
    .unwrap();
    let out = chanest(
        &[
            "simulate",
            "--config",
            "run.cfg",
            "--snr",
            "0,5",
            "--threads",
            "1",
            "--out",
            "r.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    // 2 SNR points x 2 users x 1 trial x 1 mode, plus the header.
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.contains("ls,0,"));
    assert!(csv.contains("ls,5,"));
}

#[test]
fn unknown_estimator_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = chanest(&["simulate", "--estimators", "bogus"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("bogus"));
}

#[test]
fn unknown_config_key_is_a_config_error_naming_the_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.cfg"), "trials = 1\nspam = eggs\n").unwrap();
    let out = chanest(&["simulate", "--config", "bad.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("spam") && err.contains("2"), "stderr: {err}");
}

#[test]
fn invalid_cross_field_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    // More pilots than subcarriers can hold.
    std::fs::write(dir.path().join("bad.cfg"), "pilots_per_user = 64\n").unwrap();
    let out = chanest(&["simulate", "--config", "bad.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
}

#[test]
fn hwi_sweep_writes_ideal_and_quantized_arms() {
    let dir = tempfile::tempdir().unwrap();
    let out = chanest(
        &[
            "hwi-sweep",
            "--bits",
            "3",
            "--preset",
            "desk",
            "--trials",
            "1",
            "--snr",
            "10",
            "--estimators",
            "ls",
            "--threads",
            "1",
            "--out",
            "sweep.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(csv.contains("ls@ideal,"), "ideal arm present");
    assert!(csv.contains("ls@b3,"), "3-bit arm present");
}

#[test]
fn hwi_sweep_requires_bits() {
    let dir = tempfile::tempdir().unwrap();
    let out = chanest(&["hwi-sweep", "--preset", "desk"], dir.path());
    assert_eq!(out.status.code(), Some(2), "clap usage errors exit with 2");
    assert!(stderr_of(&out).contains("--bits"));
}

#[test]
fn help_names_both_commands() {
    let dir = tempfile::tempdir().unwrap();
    let out = chanest(&["--help"], dir.path());
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("simulate"));
    assert!(stdout.contains("hwi-sweep"));
}

#[test]
fn unwritable_output_path_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = chanest(
        &[
            "simulate",
            "--preset",
            "desk",
            "--trials",
            "1",
            "--snr",
            "10",
            "--estimators",
            "ls",
            "--out",
            "no/such/dir/r.csv",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1), "stderr: {}", stderr_of(&out));
}

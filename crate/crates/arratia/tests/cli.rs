//! CLI integration: exit codes, file outputs, seed resolution.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn arratia(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arratia"))
        .args(args)
        .env_remove("ARRATIA_SEED")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.conf");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const QUICK: &str =
    "experiment = zero-mean\nseed = 21\nn_paths = 500\nn_steps = 200\ndyadic_depth = 2\n";

#[test]
fn all_pass_exits_zero_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), QUICK);
    let out_dir = dir.path().join("out");
    let output = arratia(&[
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("check zero_mean_z: PASS"), "stdout: {stdout}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["experiment"], "zero-mean");
    assert!(out_dir.join("integral_stats.csv").exists());
    let stats = fs::read_to_string(out_dir.join("integral_stats.csv")).unwrap();
    assert!(stats.starts_with("experiment,mesh,n_paths,mean,stderr\n"));
}

#[test]
fn csv_format_writes_check_rows() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), QUICK);
    let out_dir = dir.path().join("out");
    let output = arratia(&[
        "--config",
        &config,
        "--out",
        out_dir.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(output.status.code(), Some(0));
    let body = fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert!(body.starts_with("check,value,threshold,pass\n"));
    assert!(body.lines().count() >= 2);
    assert!(body.ends_with('\n'));
}

#[test]
fn unknown_experiment_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "experiment = frobnicate\nseed = 1\nn_paths = 10\n",
    );
    let output = arratia(&["--config", &config]);
    assert_eq!(output.status.code(), Some(2));
    let err = String::from_utf8(output.stderr).unwrap();
    assert!(err.contains("unknown experiment"), "stderr: {err}");
}

#[test]
fn bad_flag_and_missing_config_are_usage_errors() {
    let output = arratia(&["--configg", "x"]);
    assert_eq!(output.status.code(), Some(2));
    let output = arratia(&[]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn unreadable_config_is_io_error() {
    let output = arratia(&["--config", "/nonexistent/path/exp.conf"]);
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn parse_error_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "experiment = zero-mean\nseed = 1\nn_paths = -1\n",
    );
    let output = arratia(&["--config", &config]);
    assert_eq!(output.status.code(), Some(2));
    let err = String::from_utf8(output.stderr).unwrap();
    assert!(err.contains("line 3"), "stderr: {err}");
}

#[test]
fn seed_resolution_order() {
    let dir = tempfile::tempdir().unwrap();
    // no seed anywhere: usage error
    let config = write_config(
        dir.path(),
        "experiment = zero-mean\nn_paths = 500\nn_steps = 200\ndyadic_depth = 2\n",
    );
    let output = arratia(&["--config", &config]);
    assert_eq!(output.status.code(), Some(2));

    // env fallback works
    let output = Command::new(env!("CARGO_BIN_EXE_arratia"))
        .args(["--config", &config])
        .env("ARRATIA_SEED", "21")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));

    // --seed overrides env
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for (out, seed) in [(&out_a, "21"), (&out_b, "22")] {
        let output = Command::new(env!("CARGO_BIN_EXE_arratia"))
            .args([
                "--config",
                &config,
                "--seed",
                seed,
                "--out",
                out.to_str().unwrap(),
            ])
            .env("ARRATIA_SEED", "99")
            .output()
            .unwrap();
        assert_eq!(output.status.code(), Some(0));
    }
    let a = fs::read_to_string(out_a.join("report.json")).unwrap();
    let b = fs::read_to_string(out_b.join("report.json")).unwrap();
    assert!(a.contains("\"seed\": \"21\""));
    assert!(b.contains("\"seed\": \"22\""));
    assert_ne!(a, b);
}

#[test]
fn failing_check_exits_one() {
    // an impossible statistical gate: meeting-time with bridge correction
    // off at a coarse grid misses the quadrature badly
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "experiment = meeting-time\nseed = 5\nn_paths = 20000\nn_steps = 50\n\
         u_values = 0.05\nbridge_correction = false\n",
    );
    let output = arratia(&["--config", &config]);
    assert_eq!(
        output.status.code(),
        Some(1),
        "stdout: {}",
        String::from_utf8_lossy(&output.stdout)
    );
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("FAIL"), "stdout: {stdout}");
}

#[test]
fn meeting_time_emits_tabulation_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "experiment = meeting-time\nseed = 6\nn_paths = 2000\nn_steps = 400\nu_values = 0.5\n",
    );
    let out_dir = dir.path().join("out");
    let output = arratia(&["--config", &config, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(0));
    let tab = fs::read_to_string(out_dir.join("meeting_time.csv")).unwrap();
    assert!(tab.starts_with("u,quadrature,paper_formula,mc_mean,mc_stderr\n"));
    let plot = fs::read_to_string(out_dir.join("plot_meeting_time.csv")).unwrap();
    assert!(plot.starts_with("u,quadrature,mc_mean,mc_stderr\n"));
    assert_eq!(plot.lines().count(), 2);
}

#[test]
fn clark_verify_emits_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "experiment = clark-verify\nseed = 7\nn_paths = 200\nn_steps = 300\nfamily = both\n",
    );
    let out_dir = dir.path().join("out");
    let output = arratia(&["--config", &config, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(0));
    let body = fs::read_to_string(out_dir.join("clark_report.json")).unwrap();
    let reports: serde_json::Value = serde_json::from_str(&body).unwrap();
    let arr = reports.as_array().unwrap();
    assert_eq!(arr.len(), 2);
    for r in arr {
        assert!(r["functional"].is_string());
        assert!(r["n_paths"].is_number());
        assert!(r["max_residual"].is_number());
        assert!(r["energy_lhs"].is_number());
        assert!(r["energy_rhs"].is_number());
        assert!(r["z_score"].is_number());
        assert!(r["per_k"].is_array());
    }
}

//! End-to-end checks of the command-line driver.

use std::path::{Path, PathBuf};
use std::process::Command;

fn porofem() -> Command {
    Command::new(env!("CARGO_BIN_EXE_porofem"))
}

fn temp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("porofem_cli_tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn run_writes_solution_and_monitors() {
    let out = temp_dir("run_artifacts");
    let status = porofem()
        .args(["run", "--n", "3", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("solution_t1.vtk").exists());
    assert!(out.join("monitors.csv").exists());
    let vtk = std::fs::read_to_string(out.join("solution_t1.vtk")).unwrap();
    assert!(vtk.starts_with("# vtk DataFile Version 3.0"));
    assert!(vtk.contains("POINT_DATA 16"));
}

#[test]
fn unwritable_output_dir_fails_without_partials() {
    let out = Path::new("/proc/porofem_cannot_write_here");
    let output = porofem()
        .args(["run", "--n", "2", "--out"])
        .arg(out)
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(!out.exists());
}

#[test]
fn study_needs_two_levels() {
    let out = temp_dir("study_single");
    let output = porofem()
        .args(["study", "--mesh-list", "3", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(!out.join("rates.csv").exists());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("at least 2"), "stderr: {stderr}");
}

#[test]
fn study_emits_rates_csv_with_expected_header() {
    let out = temp_dir("study_small");
    let status = porofem()
        .args(["study", "--mesh-list", "2,4", "--T", "0.25", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("rates.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "h,L2_u,rate,H1_u,rate,L2_p,rate,H1_p,rate");
    assert!(lines.next().unwrap().starts_with("1/2,"));
    assert!(lines.next().unwrap().starts_with("1/4,"));
}

#[test]
fn config_file_is_honored_and_flags_override() {
    let out = temp_dir("config_merge");
    let cfg = out.join("run.ini");
    std::fs::write(
        &cfg,
        "[run]\nscenario = test1\nn = 2\nT = 0.5\nvtk = false\nmonitors = false\n[params]\nlambda = 0.2\n",
    )
    .unwrap();
    let output = porofem()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--out"])
        .arg(&out)
        .args(["--T", "0.25"])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    // flag T beat the file T; file vtk=false suppressed the artifact
    assert!(!out.join("solution_t0.5.vtk").exists());
    assert!(!out.join("solution_t0.25.vtk").exists());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("t = 0.25"), "stdout: {stdout}");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let output = porofem().args(["run", "--frobnicate"]).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn audit_reports_small_discrepancies() {
    let output = porofem().args(["audit", "--scenario", "test2", "--params", "test2-soft"]).output().unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("momentum"), "stdout: {stdout}");
    // every reported maximum is a small number
    for line in stdout.lines().filter(|l| l.contains("max |")) {
        let value: f64 = line.rsplit('=').next().unwrap().trim().parse().unwrap();
        assert!(value < 1e-6, "audit line too large: {line}");
    }
}

#[test]
fn energy_subcommand_runs_pure_flux() {
    let out = temp_dir("energy_cmd");
    let output = porofem()
        .args([
            "energy",
            "--scenario",
            "pure-flux-source",
            "--n",
            "4",
            "--dt",
            "0.05",
            "--T",
            "0.25",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    assert!(out.join("monitors.csv").exists());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("conservation residual"), "stdout: {stdout}");
    let csv = std::fs::read_to_string(out.join("monitors.csv")).unwrap();
    assert!(csv.starts_with("step,time,newton_iterations,cons_eta"));
    assert_eq!(csv.lines().count(), 6); // header + 5 steps
}

#[test]
fn rerunning_a_config_reproduces_monitors_byte_for_byte() {
    let out1 = temp_dir("monitors_rerun_a");
    let out2 = temp_dir("monitors_rerun_b");
    for out in [&out1, &out2] {
        let status = porofem()
            .args(["run", "--n", "4", "--dt", "0.125", "--T", "0.5", "--no-vtk", "--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(out1.join("monitors.csv")).unwrap();
    let b = std::fs::read(out2.join("monitors.csv")).unwrap();
    assert_eq!(a, b, "monitors.csv differs between identical runs");
}

#[test]
fn pretty_study_prints_aligned_table() {
    let out = temp_dir("study_pretty");
    let output = porofem()
        .args(["study", "--mesh-list", "2,4", "--T", "0.25", "--pretty", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("L2(u)") && stdout.contains("rate"), "stdout: {stdout}");
    assert!(stdout.contains("1/2") && stdout.contains("1/4"));
}

#[test]
fn jobs_flag_gives_identical_rates() {
    let out1 = temp_dir("jobs1");
    let out2 = temp_dir("jobs2");
    for (out, jobs) in [(&out1, "1"), (&out2, "2")] {
        let status = porofem()
            .args(["study", "--mesh-list", "2,4", "--T", "0.25", "--jobs", jobs, "--out"])
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = std::fs::read(out1.join("rates.csv")).unwrap();
    let b = std::fs::read(out2.join("rates.csv")).unwrap();
    assert_eq!(a, b, "parallel study changed the rates output");
}

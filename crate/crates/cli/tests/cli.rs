//! End-to-end tests of the `mosaic` binary: golden outputs, exit codes, and
//! the documented JSON schemas.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mosaic() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mosaic"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn stdout_json(output: &Output) -> serde_json::Value {
    assert!(
        output.status.success(),
        "command failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    serde_json::from_slice(&output.stdout).expect("stdout is JSON")
}

#[test]
fn test_command_matches_golden() {
    let run = || {
        mosaic()
            .args([
                "test",
                "--invariance",
                "local-exchangeability",
                "--reps",
                "999",
                "--seed",
                "7",
            ])
            .arg(fixture("null_panel.csv"))
            .output()
            .unwrap()
    };
    let out = stdout_json(&run());
    let golden: serde_json::Value = serde_json::from_str(include_str!(
        "golden/test_null_panel.json"
    ))
    .unwrap();
    assert_eq!(out["p_value"], golden["p_value"]);
    assert_eq!(out["statistic"], golden["statistic"]);
    assert_eq!(out["R"], golden["R"]);
    assert_eq!(out["seed"], golden["seed"]);
    assert_eq!(out["config"]["n_clusters"], 4);
    assert_eq!(out["config"]["time_ids"][0], "1");

    // Byte-identical on a second run.
    let again = run();
    assert_eq!(again.stdout, run().stdout);
}

#[test]
fn ci_on_noiseless_fixture_degenerates_at_planted_beta() {
    let out = stdout_json(
        &mosaic()
            .args([
                "ci",
                "--z",
                "treatment",
                "--alpha",
                "0.05",
                "--reps",
                "199",
                "--seed",
                "3",
            ])
            .arg(fixture("noiseless_panel.csv"))
            .output()
            .unwrap(),
    );
    let beta = out["beta_hat"].as_f64().unwrap();
    let lower = out["lower"].as_f64().unwrap();
    let upper = out["upper"].as_f64().unwrap();
    assert!((beta - 2.5).abs() < 1e-8, "beta_hat = {beta}");
    assert!((lower - 2.5).abs() < 1e-8 && (upper - 2.5).abs() < 1e-8);
    assert!(out["se"].as_f64().unwrap() < 1e-8);
}

#[test]
fn output_flag_writes_the_same_json() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("result.json");
    let out = mosaic()
        .args(["test", "--reps", "99", "--seed", "1", "--output"])
        .arg(&path)
        .arg(fixture("null_panel.csv"))
        .output()
        .unwrap();
    assert!(out.status.success());
    let from_file: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let from_stdout: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(from_file, from_stdout);
}

#[test]
fn missing_file_is_a_validation_error() {
    let out = mosaic()
        .args(["test", "/nonexistent/nope.csv"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn unbalanced_panel_exits_2_and_names_the_cell() {
    let mut file = tempfile::NamedTempFile::new().unwrap();
    write!(
        file,
        "unit,time,y\nu1,1,1.0\nu1,2,2.0\nu2,1,3.0\n"
    )
    .unwrap();
    file.flush().unwrap();
    let out = mosaic().arg("test").arg(file.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("(u2, 2)"), "stderr: {stderr}");
}

#[test]
fn degenerate_cluster_exits_3_with_merge_hint() {
    // Two singleton clusters with two time periods and one covariate: the
    // augmented design fills each cluster's two observations exactly.
    let mut file = tempfile::NamedTempFile::new().unwrap();
    write!(
        file,
        "unit,time,y,x_a,cluster\n\
         u1,1,1.0,0.3,c1\n\
         u1,2,2.0,0.9,c1\n\
         u2,1,3.0,0.5,c2\n\
         u2,2,4.0,0.1,c2\n"
    )
    .unwrap();
    file.flush().unwrap();
    let out = mosaic()
        .args(["test", "--reps", "19"])
        .arg(file.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("merge-clusters"), "stderr: {stderr}");
}

#[test]
fn absolute_statistic_mode_runs() {
    let out = stdout_json(
        &mosaic()
            .args(["test", "--statistic", "absolute", "--reps", "99", "--seed", "5"])
            .arg(fixture("null_panel.csv"))
            .output()
            .unwrap(),
    );
    assert!(out["statistic"].as_f64().unwrap() >= 0.0);
    assert_eq!(out["config"]["statistic"], "absolute");
}

#[test]
fn custom_invariance_matrix_is_accepted() {
    // Time reversal for T = 6, supplied explicitly.
    let mut file = tempfile::NamedTempFile::new().unwrap();
    for i in 0..6 {
        let row: Vec<&str> = (0..6).map(|j| if i + j == 5 { "1" } else { "0" }).collect();
        writeln!(file, "{}", row.join(",")).unwrap();
    }
    file.flush().unwrap();

    let custom = stdout_json(
        &mosaic()
            .args([
                "test",
                "--invariance",
                &format!("custom:{}", file.path().display()),
                "--reps",
                "99",
                "--seed",
                "2",
            ])
            .arg(fixture("null_panel.csv"))
            .output()
            .unwrap(),
    );
    let builtin = stdout_json(
        &mosaic()
            .args(["test", "--invariance", "time-reversal", "--reps", "99", "--seed", "2"])
            .arg(fixture("null_panel.csv"))
            .output()
            .unwrap(),
    );
    assert_eq!(custom["p_value"], builtin["p_value"]);
}

#[test]
fn simulate_calibration_band() {
    let out = stdout_json(
        &mosaic()
            .args([
                "simulate",
                "--family",
                "robustness324",
                "--M",
                "20",
                "--T",
                "10",
                "--sims",
                "500",
                "--reps",
                "199",
                "--seed",
                "11",
            ])
            .output()
            .unwrap(),
    );
    let rows = out["rows"].as_array().unwrap();
    let at_05 = rows
        .iter()
        .find(|r| (r["alpha"].as_f64().unwrap() - 0.05).abs() < 1e-12)
        .unwrap();
    let rate = at_05["rejection_rate"].as_f64().unwrap();
    assert!(
        (0.02..=0.08).contains(&rate),
        "rejection at 5% = {rate}, expected within [0.02, 0.08]"
    );
}

#[test]
fn simulate_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = mosaic()
        .args([
            "simulate",
            "--family",
            "iid-gaussian",
            "--N",
            "40",
            "--T",
            "6",
            "--M",
            "8",
            "--sims",
            "50",
            "--reps",
            "49",
            "--mode",
            "randomization",
            "--out-dir",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("draws.csv").exists());
    assert!(dir.path().join("histogram.csv").exists());
}

#[test]
fn diagnose_writes_report_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = mosaic()
        .args([
            "diagnose",
            "--z",
            "x_w",
            "--splits",
            "6",
            "--reps",
            "99",
            "--seed",
            "4",
            "--out-dir",
        ])
        .arg(dir.path())
        .arg(fixture("null_panel.csv"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert!(report.starts_with("split,method,alpha"));
    // 6 splits x 3 methods x 2 alphas data rows plus the header.
    assert_eq!(report.lines().count(), 1 + 6 * 3 * 2);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert!(summary["aggregates"].as_array().unwrap().len() >= 2);
}

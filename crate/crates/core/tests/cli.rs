//! End-to-end checks of the command-line interface.

use std::io::Write;
use std::path::Path;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_aptmle")
}

const SAP: &str = r#"
estimand = "ATE"
or_candidates = ["unadjusted", "glm(W1)"]
ps_candidates = ["unadjusted"]
cv_folds = 5
seed = 31

[data]
id = "pid"
arm = "arm"
outcome = "y"
covariates = ["W1"]
"#;

const DGP: &str = r#"
n_units = 40
randomization_probability = 0.5
outcome = "continuous"
noise_half_width = 0.2
intercept = 0.5
arm_coef = 0.1

[[covariates]]
name = "W1"
dist = "uniform"
low = -1.0
high = 1.0
coef = 0.2
"#;

fn write_file(dir: &Path, name: &str, content: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, content).unwrap();
    path
}

fn write_trial(dir: &Path, name: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "pid,arm,y,W1").unwrap();
    let mut state = 0x5432u64;
    let mut next = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    for i in 0..30 {
        let arm = i % 2;
        let w = next();
        let y = u8::from(next() < 0.35 + 0.2 * arm as f64 + 0.2 * w);
        writeln!(f, "p{i},{arm},{y},{w:.6}").unwrap();
    }
    path
}

#[test]
fn analyze_writes_both_report_forms() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_file(dir.path(), "sap.toml", SAP);
    let data = write_trial(dir.path(), "trial.csv");
    let out = dir.path().join("report");
    let result = Command::new(bin())
        .args(["analyze", "--config"])
        .arg(&config)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert!(json.contains("\"final_estimate\""));
    assert!(json.contains("\"data_fingerprint_sha256\""));
    let txt = std::fs::read_to_string(dir.path().join("report.txt")).unwrap();
    assert!(txt.contains("Precision gain"));
}

#[test]
fn analyze_rejects_config_without_unadjusted() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SAP.replace(
        "or_candidates = [\"unadjusted\", \"glm(W1)\"]",
        "or_candidates = [\"glm(W1)\"]",
    );
    let config = write_file(dir.path(), "sap.toml", &bad);
    let data = write_trial(dir.path(), "trial.csv");
    let result = Command::new(bin())
        .args(["analyze", "--config"])
        .arg(&config)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(dir.path().join("report"))
        .output()
        .unwrap();
    assert!(!result.status.success());
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(
        stderr.contains("must be included as a candidate for the outcome regression"),
        "stderr: {stderr}"
    );
}

#[test]
fn simulate_smoke_run_emits_all_metric_fields() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_file(dir.path(), "sap.toml", SAP);
    let dgp = write_file(dir.path(), "dgp.toml", DGP);
    let out = dir.path().join("sim");
    let result = Command::new(bin())
        .args(["simulate", "--dgp"])
        .arg(&dgp)
        .arg("--config")
        .arg(&config)
        .args(["--reps", "10", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let json = std::fs::read_to_string(dir.path().join("sim.json")).unwrap();
    for field in [
        "mean_bias",
        "empirical_variance",
        "mean_estimated_variance",
        "mse",
        "ci_coverage",
        "rejection_rate",
        "relative_precision",
        "sample_size_savings",
        "true_effect_method",
    ] {
        assert!(json.contains(field), "missing {field} in sim report");
    }
}

#[test]
fn simulate_rejects_malformed_dgp() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_file(dir.path(), "sap.toml", SAP);
    let dgp = write_file(dir.path(), "dgp.toml", "n_units = \"forty\"\n");
    let result = Command::new(bin())
        .args(["simulate", "--dgp"])
        .arg(&dgp)
        .arg("--config")
        .arg(&config)
        .args(["--reps", "2", "--out"])
        .arg(dir.path().join("sim"))
        .output()
        .unwrap();
    assert!(!result.status.success());
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("n_units"), "stderr should name the bad field: {stderr}");
}

#[test]
fn permtest_reports_rate_and_exhaustive_flag() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_file(dir.path(), "sap.toml", SAP);
    let data = write_trial(dir.path(), "trial.csv");
    let out = dir.path().join("perm");
    let result = Command::new(bin())
        .args(["permtest", "--config"])
        .arg(&config)
        .arg("--data")
        .arg(&data)
        .args(["--reps", "40", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let json = std::fs::read_to_string(dir.path().join("perm.json")).unwrap();
    assert!(json.contains("\"rejection_rate\""));
    assert!(json.contains("\"rate_ci95\""));
    assert!(json.contains("\"exhaustive\""));
    assert!(json.contains("\"cluster_level\""));
}

#[test]
fn seed_override_is_logged() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_file(dir.path(), "sap.toml", SAP);
    let data = write_trial(dir.path(), "trial.csv");
    let result = Command::new(bin())
        .args(["analyze", "--config"])
        .arg(&config)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(dir.path().join("report"))
        .args(["--seed", "777"])
        .output()
        .unwrap();
    assert!(result.status.success());
    let json = std::fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert!(json.contains("\"master_seed\": 777"));
    assert!(json.contains("\"seed_overridden\": true"));
}

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const SCENARIO: &str = r#"{"n": 100, "P": 10, "s": 2, "block_size": 5, "b0": 1.0, "lambda_c": 0.2, "seed": 5}"#;

fn penmcfm(args: &[&str], extra: &[&Path]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_penmcfm"));
    cmd.args(args);
    cmd.args(extra);
    cmd.output().expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Simulates the small scenario into `<tmp>/d` and returns the data path.
fn simulated(tmp: &TempDir) -> PathBuf {
    let sc = tmp.path().join("scenario.json");
    std::fs::write(&sc, SCENARIO).unwrap();
    let d = tmp.path().join("d");
    let out = Command::new(env!("CARGO_BIN_EXE_penmcfm"))
        .args(["simulate", "--scenario"])
        .arg(&sc)
        .arg("--out")
        .arg(&d)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    d.join("data.csv")
}

fn run(args: &[&str], data: &Path, out_dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_penmcfm"))
        .args(args)
        .arg("--data")
        .arg(data)
        .arg("--out")
        .arg(out_dir)
        .output()
        .unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_data_roles_and_truth() {
    let tmp = TempDir::new().unwrap();
    let data = simulated(&tmp);
    let d = data.parent().unwrap();
    let header = std::fs::read_to_string(&data).unwrap().lines().next().unwrap().to_string();
    assert!(header.starts_with("time,status,zu1,zu2,g1,"), "{header}");
    let roles = json(&d.join("data.roles.json"));
    assert_eq!(roles["x_pen"].as_array().unwrap().len(), 10);
    assert_eq!(roles["shared_penalized"], true);
    let truth = json(&d.join("truth.json"));
    assert_eq!(truth["signal_indices"], serde_json::json!([2, 7]));
    assert_eq!(truth["pi_true"].as_array().unwrap().len(), 100);
}

#[test]
fn fixed_lambda_fit_writes_fit_json() {
    let tmp = TempDir::new().unwrap();
    let data = simulated(&tmp);
    let out = run(&["fit", "--lambda", "0.05", "--alpha-enet", "0.9", "--k-stages", "1"], &data, &tmp.path().join("f"));
    assert!(out.status.success(), "{}", stderr(&out));
    let fit = json(&tmp.path().join("f/fit.json"));
    assert_eq!(fit["method"], "em");
    assert_eq!(fit["lambda"], 0.05);
    assert_eq!(fit["alpha_enet"], 0.9);
    assert_eq!(fit["stages"], 1);
    assert_eq!(fit["params"]["beta_p"].as_array().unwrap().len(), 10);
}

#[test]
fn iteration_limit_exits_with_code_two() {
    let tmp = TempDir::new().unwrap();
    let data = simulated(&tmp);
    let out = run(&["fit", "--lambda", "0.05", "--max-iter", "1"], &data, &tmp.path().join("f"));
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(tmp.path().join("f/fit.json").exists());
}

#[test]
fn prs_on_an_empty_selection_fails() {
    let tmp = TempDir::new().unwrap();
    let data = simulated(&tmp);
    let out = run(&["fit", "--lambda", "max"], &data, &tmp.path().join("f"));
    assert!(out.status.success(), "{}", stderr(&out));
    let fit = json(&tmp.path().join("f/fit.json"));
    assert!(fit["selected_support_beta"].as_array().unwrap().is_empty());
    let fit_path = tmp.path().join("f/fit.json");
    let out = Command::new(env!("CARGO_BIN_EXE_penmcfm"))
        .args(["prs", "--fit"])
        .arg(&fit_path)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(tmp.path().join("p"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("empty selection"), "{}", stderr(&out));
}

#[test]
fn prs_splits_at_the_median_and_tests() {
    let tmp = TempDir::new().unwrap();
    let data = simulated(&tmp);
    let out = run(&["fit", "--lambda", "0.02", "--k-stages", "1"], &data, &tmp.path().join("f"));
    assert!(out.status.success(), "{}", stderr(&out));
    let out = Command::new(env!("CARGO_BIN_EXE_penmcfm"))
        .args(["prs", "--fit"])
        .arg(tmp.path().join("f/fit.json"))
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(tmp.path().join("p"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let prs = json(&tmp.path().join("p/prs.json"));
    assert_eq!(prs["n_high"], 50);
    assert_eq!(prs["n_low"], 50);
    let p = prs["logrank"]["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    let rows = std::fs::read_to_string(tmp.path().join("p/prs.csv")).unwrap().lines().count();
    assert_eq!(rows, 101);
}

#[test]
fn flags_override_config_and_unknown_keys_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let data = simulated(&tmp);
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"lambda": "max", "alpha_enet": 0.5, "k_stages": 1}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_penmcfm"))
        .args(["fit", "--lambda", "0.04", "--config"])
        .arg(&cfg)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(tmp.path().join("f"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let fit = json(&tmp.path().join("f/fit.json"));
    assert_eq!(fit["lambda"], 0.04);
    assert_eq!(fit["alpha_enet"], 0.5);
    assert_eq!(fit["stages"], 1);

    std::fs::write(&cfg, r#"{"lamda": 0.1}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_penmcfm")).args(["fit", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("unknown field `lamda`"), "{}", stderr(&out));
}

#[test]
fn missing_data_is_a_usage_error() {
    let out = penmcfm(&["fit", "--lambda", "0.1"], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--data is required"));
}

#[test]
fn malformed_csv_reports_the_line() {
    let tmp = TempDir::new().unwrap();
    let data = simulated(&tmp);
    let text = std::fs::read_to_string(&data).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let rest = lines[3].split_once(',').unwrap().1.to_string();
    lines[3] = format!(",{rest}");
    std::fs::write(&data, lines.join("\n")).unwrap();
    let out = run(&["fit", "--lambda", "0.1"], &data, &tmp.path().join("f"));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 4"), "{}", stderr(&out));
}

#[test]
fn gmifs_fit_writes_an_expanded_path() {
    let tmp = TempDir::new().unwrap();
    let data = simulated(&tmp);
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"max_steps": 200}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_penmcfm"))
        .args(["fit", "--method", "gmifs", "--frailty", "off", "--config"])
        .arg(&cfg)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(tmp.path().join("g"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let path = std::fs::read_to_string(tmp.path().join("g/path.csv")).unwrap();
    let header = path.lines().next().unwrap();
    assert!(header.starts_with("step,loglik,aic,b_p.g1+,b_p.g1-"), "{header}");
    assert!(path.lines().count() >= 2);
    let fit = json(&tmp.path().join("g/fit.json"));
    assert_eq!(fit["method"], "gmifs");
    assert_eq!(fit["frailty_enabled"], false);
    assert!(fit["gmifs_selected_step"].as_u64().unwrap() <= 200);
}

#[test]
fn cv_on_an_explicit_grid_scores_every_fold() {
    let tmp = TempDir::new().unwrap();
    let data = simulated(&tmp);
    let out = run(
        &["cv", "--lambda", "0.08,0.04", "--alpha-enet", "1", "--folds", "3", "--k-stages", "1"],
        &data,
        &tmp.path().join("cv"),
    );
    assert!(out.status.success() || out.status.code() == Some(2), "{}", stderr(&out));
    let csv = std::fs::read_to_string(tmp.path().join("cv/cv.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "alpha_enet,lambda,fold,c_cure");
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    let cv = json(&tmp.path().join("cv/cv.json"));
    let lambda = cv["lambda"].as_f64().unwrap();
    assert!(lambda == 0.08 || lambda == 0.04);
}

#[test]
fn metrics_compare_a_fit_with_the_truth() {
    let tmp = TempDir::new().unwrap();
    let data = simulated(&tmp);
    let out = run(&["fit", "--lambda", "0.02", "--k-stages", "1"], &data, &tmp.path().join("f"));
    assert!(out.status.success(), "{}", stderr(&out));
    let out = Command::new(env!("CARGO_BIN_EXE_penmcfm"))
        .args(["metrics", "--truth"])
        .arg(data.parent().unwrap().join("truth.json"))
        .arg("--fit")
        .arg(tmp.path().join("f/fit.json"))
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(tmp.path().join("m"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let m = json(&tmp.path().join("m/metrics.json"));
    for key in ["sensitivity_beta", "fpr_b", "rme_beta", "err_b", "c", "c_cure", "bias_pi", "mse_pi"] {
        assert!(m[key].is_number(), "{key} missing");
    }
    let fpr = m["fpr_beta"].as_f64().unwrap();
    assert!((fpr - (1.0 - m["specificity_beta"].as_f64().unwrap())).abs() < 1e-12);
}

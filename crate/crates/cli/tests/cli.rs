use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SCENARIO: &str = r#"
seed = 5

[grid]
dim = 1
extents = [[-2.0, 2.0]]
points = [401]

[fields]
omega_radius = 1.0
f = { kind = "constant", value = 1.0 }
q = { kind = "polynomial", coeffs = [1.0, 0.0, -2.0] }

[sweep]
a = [0.1]
lambda = [0.5]
mu = [1e4]
p = [5.0]
branches = ["minus"]

[output]
dir = "out"
"#;

fn nehari(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nehari")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("scenario.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn verify_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SCENARIO);
    let ok = nehari(&["verify", "--config", &cfg]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let report: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(report["passed"], true);

    let cfg = write_config(tmp.path(), &format!("{SCENARIO}\n[verify]\nfault = \"gradient_stencil\"\n"));
    let bad = nehari(&["verify", "--config", &cfg]);
    assert_eq!(bad.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_slice(&bad.stdout).unwrap();
    let failing: Vec<&str> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["passed"] == false)
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    assert_eq!(failing, vec!["gradient_fd"]);
}

#[test]
fn sweep_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SCENARIO.replace("lambda = [0.5]", "lambda = [0.3, 0.5]").replace("branches = [\"minus\"]", "");
    let cfg = write_config(tmp.path(), &text);
    let first = nehari(&["sweep", "--config", &cfg]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let a = snapshot(&tmp.path().join("out"));
    fs::remove_dir_all(tmp.path().join("out")).unwrap();
    assert!(nehari(&["sweep", "--config", &cfg]).status.success());
    let b = snapshot(&tmp.path().join("out"));
    for name in ["rows.csv", "thresholds.json", "report.json", "bifurcation.csv"] {
        assert!(a.contains_key(name), "{name} missing");
    }
    assert!(a.keys().any(|k| k.starts_with("u_")));
    assert_eq!(a, b);
}

#[test]
fn empty_axis_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SCENARIO.replace("lambda = [0.5]", "lambda = []"));
    let out = nehari(&["sweep", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sweep.lambda is empty"));
}

#[test]
fn solve_then_classify() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SCENARIO);
    let field = tmp.path().join("u.csv");
    let out = nehari(&["solve", "--branch", "minus", "--config", &cfg, "--seed", "phi1", "--out", field.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["converged"], true);
    assert!(report["energy"]["J"].as_f64().unwrap() > 0.0);

    let out = nehari(&["fiber", "classify", "--config", &cfg, "--input", field.to_str().unwrap()]);
    assert!(out.status.success());
    let class: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let roots = class["class"]["roots"].as_array().unwrap();
    assert_eq!(roots.len(), 1);
    assert_eq!(roots[0]["kind"], "max");
    assert!((roots[0]["t"].as_f64().unwrap() - 1.0).abs() < 1e-8);

    let bad = nehari(&["solve", "--branch", "minus", "--config", &cfg, "--seed", "nope"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn thresholds_and_eig_print() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SCENARIO);
    let out = nehari(&["thresholds", "--config", &cfg, "--budget", "4"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["thresholds"]["gamma0_est"].as_f64().unwrap() > 0.0);
    assert_eq!(v["tags"][0]["tag"], "T1");

    let out = nehari(&["eig", "--config", &cfg, "--mu-list", "10,100"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("mu,lambda_tilde,l2_gap,iterations,residual"));
}

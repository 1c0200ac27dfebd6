use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BROWNIAN: &str = r#"
[model.pre]
family = "brownian_drift"
sigma = 1.0
drift = 0.0

[model.post]
family = "brownian_drift"
sigma = 1.0
drift = 1.0
"#;

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let path = dir.join("config.toml");
    fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_levy-cusum"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out/summary.json")).unwrap()).unwrap()
}

#[test]
fn volatility_mismatch_is_rejected_with_condition() {
    let tmp = tempfile::tempdir().unwrap();
    let config = BROWNIAN.replacen("sigma = 1.0\ndrift = 1.0", "sigma = 2.0\ndrift = 1.0", 1);
    let out = run(tmp.path(), &config, &["validate"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("error_category=inadmissible"), "{err}");
    assert!(err.contains("condition (i)"), "{err}");
    // the validation summary is still written
    assert!(tmp.path().join("out/summary.json").exists());

    let out = run(tmp.path(), &config, &["arl"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(tmp.path(), &format!("{BROWNIAN}\n[simulation]\nreps = 4\n"), &["arl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error_category=config"));

    let out = run(tmp.path(), BROWNIAN, &["calibrate"]);
    assert_eq!(out.status.code(), Some(2), "missing gamma: {}", stderr(&out));
}

#[test]
fn in_control_arl_matches_closed_form() {
    let tmp = tempfile::tempdir().unwrap();
    let config = format!(
        "{BROWNIAN}\n[simulation]\nn_rep = 2000\ngrid_dt = 0.001\nmaster_seed = 11\n\n[detector]\nrule = \"cusum_continuous\"\nh_bar = 2.0\n"
    );
    let out = run(tmp.path(), &config, &["arl"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = &summary(tmp.path())["results"]["arl"];
    let est = report["estimate"].as_f64().unwrap();
    let se = report["std_error"].as_f64().unwrap();
    let exact = 2.0 * (2f64.exp() - 2.0 - 1.0);
    // monitoring on a 1e-3 grid overshoots the continuous value by about 6%
    assert!((est - exact).abs() <= 3.0 * se + 0.07 * exact, "{est} ± {se} vs {exact}");
    let stops = fs::read_to_string(tmp.path().join("out/stops.csv")).unwrap();
    assert_eq!(stops.lines().count(), 2001);
}

#[test]
fn convergence_means_decrease_with_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let config = format!(
        "{BROWNIAN}\n[simulation]\nn_rep = 400\ngrid_dt = 0.01\n\n[detector]\ndelta = 0.4\nh_bar = 2.0\nregime = \"out_of_control\"\n\n[experiment]\ndyadic_levels = 3\n"
    );
    let out = run(tmp.path(), &config, &["converge"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(tmp.path().join("out/convergence.csv")).unwrap();
    let means: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(means.len(), 4);
    assert!(means.windows(2).all(|w| w[1] <= w[0]), "{means:?}");
}

#[test]
fn embedded_config_reproduces_report() {
    let tmp = tempfile::tempdir().unwrap();
    let config = format!("{BROWNIAN}\n[simulation]\nn_rep = 300\nmaster_seed = 5\n");
    let out = run(tmp.path(), &config, &["arl", "--seed", "9"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read_to_string(tmp.path().join("config.toml")).unwrap(), config);
    let first = fs::read(tmp.path().join("out/report.csv")).unwrap();
    let s = summary(tmp.path());
    assert_eq!(s["master_seed"], 9);
    assert!(s["model_digest"].is_string());

    let embedded: toml::Value = serde_json::from_value(s["config"].clone()).unwrap();
    let replay = tempfile::tempdir().unwrap();
    let out = run(replay.path(), &toml::to_string(&embedded).unwrap(), &["arl"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(fs::read(replay.path().join("out/report.csv")).unwrap(), first);
}

#[test]
fn thread_count_does_not_change_results() {
    let config = format!(
        "{BROWNIAN}\n[simulation]\nn_rep = 300\n\n[detector]\ngamma = 20.0\n[experiment]\nrel_tol = 0.05\n"
    );
    let mut reports = Vec::new();
    for threads in ["1", "3"] {
        let tmp = tempfile::tempdir().unwrap();
        let out = run(tmp.path(), &config, &["calibrate", "--threads", threads]);
        assert!(out.status.success(), "{}", stderr(&out));
        reports.push((
            fs::read(tmp.path().join("out/report.csv")).unwrap(),
            fs::read(tmp.path().join("out/calibration_trace.csv")).unwrap(),
        ));
    }
    assert_eq!(reports[0], reports[1]);
}

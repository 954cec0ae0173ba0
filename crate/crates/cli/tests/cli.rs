use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mact-lab"))
        .args(args)
        .current_dir(cwd)
        .env_remove("MACT_LAB_OUT")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

#[test]
fn exp1_headline_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("res");
    let o = lab(&["run", "--exp", "1", "--out", out.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(
        stdout(&o).contains("exp1: eps_star=1.04m mact_eps=1.36m certificate=OK"),
        "{}",
        stdout(&o)
    );
    for f in ["summary.json", "scenario.csv", "trajectory.csv", "timing.json"] {
        assert!(out.join("exp1").join(f).is_file(), "{f}");
    }
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("exp1/summary.json")).unwrap()).unwrap();
    assert!(summary.is_object());
}

#[test]
fn exp8_prints_the_comparison_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["run", "--exp", "8", "--policy", "mact,tube", "--out", "r"], dir.path());
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}");
    let rows: Vec<&str> = text.lines().map(str::trim).collect();
    assert!(rows.iter().any(|l| l.starts_with("mact ") && l.contains("100")), "{text}");
    assert!(rows.iter().any(|l| l.starts_with("tube ") && l.contains("100")), "{text}");
    assert!(!rows.iter().any(|l| l.starts_with("adaptive ")), "{text}");
    assert!(dir.path().join("r/exp8/table2.csv").is_file());
}

#[test]
fn analyze_reports_the_regime() {
    let dir = tempfile::tempdir().unwrap();
    let r = json(&lab(&["analyze", "--v", "15", "--kappa", "0.015", "--json"], dir.path()));
    assert_eq!(r["regime"], "outward");
    assert!((r["c_trans"].as_f64().unwrap() - 0.6075).abs() < 1e-9);
    assert!((r["v_c"].as_f64().unwrap() - 12.0).abs() < 0.06);
    assert!((r["eps_star"].as_f64().unwrap() - 1.04).abs() < 0.05);

    let r = json(&lab(&["analyze", "--v", "10", "--kappa", "0.015", "--json"], dir.path()));
    assert_eq!(r["regime"], "inward");
    assert!(r["c_trans"].as_f64().unwrap() < 0.0);

    let text = stdout(&lab(&["analyze", "--v", "15", "--kappa", "0.015"], dir.path()));
    assert!(text.contains("regime=outward"), "{text}");
}

#[test]
fn analyze_rejects_nonpositive_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = lab(&["analyze", "--v", "0", "--kappa", "0.01"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn open_calibration_matches_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let r = json(&lab(&["calibrate", "--mode", "open", "--json"], dir.path()));
    assert_eq!(r["n_points"], 20);
    assert!((r["a2_safe"].as_f64().unwrap() - 0.404).abs() / 0.404 < 0.1, "{r}");

    let r = json(&lab(
        &["calibrate", "--speeds", "15", "--curvatures", "0.015", "--json"],
        dir.path(),
    ));
    let expected = r["a2"].as_f64().unwrap() * 225.0 * 0.015;
    let eps = json(&lab(&["analyze", "--v", "15", "--kappa", "0.015", "--json"], dir.path()))["eps_star"]
        .as_f64()
        .unwrap();
    assert!((expected - eps).abs() < 1e-9);
}

#[test]
fn closed_calibration_on_one_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let r = json(&lab(
        &["calibrate", "--mode", "closed", "--speeds", "15", "--curvatures", "0.015", "--json"],
        dir.path(),
    ));
    assert_eq!(r["mode"], "closed");
    assert_eq!(r["n_points"], 1);
    let a2 = r["a2_cl"].as_f64().unwrap();
    assert!(a2.is_finite() && a2 > 0.0);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[vehicle]\nmas = 1600.0\n").unwrap();
    let o = lab(&["run", "--exp", "1", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mas"));

    let o = lab(&["run", "--exp", "9"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("results").exists());
}

#[test]
fn output_directory_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let env_out = dir.path().join("from_env");
    let run = |extra: &[&str], env: bool| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_mact-lab"));
        c.args(["run", "--exp", "3"]).args(extra).current_dir(dir.path());
        if env {
            c.env("MACT_LAB_OUT", &env_out);
        } else {
            c.env_remove("MACT_LAB_OUT");
        }
        assert!(c.output().unwrap().status.success());
    };

    run(&[], true);
    assert!(env_out.join("exp3/summary.json").is_file());

    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[run]\nout = \"from_file\"\n").unwrap();
    run(&["--config", cfg.to_str().unwrap()], true);
    assert!(dir.path().join("from_file/exp3/summary.json").is_file());

    run(&["--config", cfg.to_str().unwrap(), "--out", "from_flag"], true);
    assert!(dir.path().join("from_flag/exp3/summary.json").is_file());

    run(&[], false);
    assert!(dir.path().join("results/exp3/summary.json").is_file());
}

#[test]
fn config_file_overrides_reach_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("a2.toml");
    std::fs::write(&cfg, "[run]\nexp = \"1\"\n").unwrap();
    let o = lab(&["run", "--config", cfg.to_str().unwrap(), "--a2", "0.2", "--out", "o"], dir.path());
    let text = stdout(&o);
    assert!(text.starts_with("exp1:"), "{text}");
    assert!(!text.contains("exp2:"), "{text}");
    assert!(text.contains("mact_eps=0.68m"), "{text}");
    assert!(text.contains("certificate=FAIL"), "{text}");
    assert_eq!(o.status.code(), Some(1));
}

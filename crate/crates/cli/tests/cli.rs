use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn todalab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_todalab")).args(args).output().expect("binary runs")
}

fn config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("json report on stdout")
}

#[test]
fn verify_passes_and_perturb_fails() {
    let out = todalab(&["verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let checks = v["result"]["checks"].as_array().unwrap();
    assert!(checks.len() >= 15);
    for c in checks {
        assert!(c["abs_error"].is_number() && c["name"].is_string());
        assert_eq!(c["pass"], Value::Bool(true), "{c}");
    }
    assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);

    let out = todalab(&["verify", "--perturb"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bubble_energy"));
}

#[test]
fn eps_zero_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), "a.cfg", "eps=0\ngrid.n=32\n");
    assert_eq!(todalab(&["solve", "--config", &c]).status.code(), Some(64));
}

#[test]
fn heavy_masses_warn() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), "a.cfg", "masses=13,13\ngrid.n=32\n");
    let out = todalab(&["solve", "--config", &c]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert_eq!(out.status.code(), Some(64));
}

#[test]
fn bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    for (i, text) in ["nonsense.key=1", "grid.n=100", "points=0.2,0.3;0.4", "metric.kind=file=missing.grid"].iter().enumerate() {
        let c = config(dir.path(), &format!("{i}.cfg"), text);
        let out = todalab(&["green", "--config", &c]);
        assert_eq!(out.status.code(), Some(64), "{text}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(todalab(&["verify", "--format", "xml"]).status.code(), Some(64));
    assert_eq!(todalab(&["solve", "--config", "/nonexistent/x.cfg"]).status.code(), Some(64));
}

#[test]
fn solve_writes_report_and_fields_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), "s.cfg", "eps=0.5\ngrid.n=64\ninit.amplitude=0.3\nseed=3\n");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = todalab(&["solve", "--config", &c, "--out", d.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let ra = std::fs::read(a.join("solve.json")).unwrap();
    assert_eq!(ra, std::fs::read(b.join("solve.json")).unwrap());
    let v: Value = serde_json::from_slice(&ra).unwrap();
    let rep = &v["result"]["report"];
    assert!(rep["grad_norm"].as_f64().unwrap() < 1e-8);
    assert!(rep["iterations"].as_u64().unwrap() > 0);
    assert_eq!(v["tolerances"]["solver.grad_tol"].as_f64(), Some(1e-8));
    let u1 = std::fs::read_to_string(a.join("u1.grid")).unwrap();
    assert_eq!(u1.lines().next(), Some("64"));
    assert_eq!(u1.split_whitespace().count(), 1 + 64 * 64);
}

#[test]
fn solver_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), "s.cfg", "eps=0.5\ngrid.n=32\ninit.amplitude=0.3\nsolver.max_iter=2\n");
    let out = todalab(&["solve", "--config", &c]);
    assert_eq!(out.status.code(), Some(2));
    // the partial trace is still reported
    assert!(json(&out)["result"]["report"]["energy_trace"].as_array().unwrap().len() >= 2);
}

#[test]
fn green_reports_log_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), "g.cfg", "grid.n=64\n");
    let out = todalab(&["green", "--config", &c]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let a: Vec<f64> = v["result"]["log_coefficients"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap())).collect();
    assert_eq!(a, vec![-4.0, 2.0, 2.0, -4.0]);

    let c = config(dir.path(), "g2.cfg", "grid.n=64\ncase=2\n");
    let out = todalab(&["green", "--config", &c, "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("key,value\n"));
    assert!(text.contains("result.log_coefficients.0.0,-4.0"));
    assert!(text.contains("result.log_coefficients.1.0,2.0"));
}

#[test]
fn testfn_schema() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), "t.cfg", "grid.n=64\n");
    let out = todalab(&["testfn", "--config", &c]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let fit = &json(&out)["result"]["fit"];
    for key in ["eps", "L", "phi0", "constant_used", "remainder", "regressor", "fitted_slope", "target_slope"] {
        assert!(!fit[key].is_null(), "{key}");
    }
    assert_eq!(fit["phi0"].as_array().unwrap().len(), 5);
}

#[test]
fn sweep_csv_has_monotone_eps() {
    let dir = tempfile::tempdir().unwrap();
    let c = config(dir.path(), "w.cfg", "grid.n=32\noutput.format=csv\n");
    let out = todalab(&["sweep", "--config", &c, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert!(text.starts_with("# config_hash="));
    let eps: Vec<f64> = text.lines().filter(|l| !l.starts_with('#')).skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(eps.len(), 5);
    assert!(eps.windows(2).all(|w| w[1] < w[0]));
    assert!(text.lines().skip(3).all(|l| l.contains(",converged,")));
}

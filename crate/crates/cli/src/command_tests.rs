use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::{execute, CliError};

fn scenarios() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn dobbench(args: &[&str]) -> Result<(), CliError> {
    execute(std::iter::once("dobbench").chain(args.iter().copied()))
}

fn code(r: &Result<(), CliError>) -> u8 {
    r.as_ref().err().map_or(0, CliError::code)
}

fn message(r: &Result<(), CliError>) -> String {
    r.as_ref().err().map(ToString::to_string).unwrap_or_default()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Benchmark scenario with a short horizon, written under `dir`.
fn short_benchmark(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let text = std::fs::read_to_string(scenarios().join("benchmark.json")).unwrap();
    let mut v: Value = serde_json::from_str(&text).unwrap();
    v["sim"]["horizon"] = 2.0.into();
    edit(&mut v);
    let path = dir.join("scenario.json");
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

#[test]
fn simulate_writes_csv_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let sc = short_benchmark(dir.path(), |_| {});
    let csv = dir.path().join("run.csv");
    let out = dobbench(&["simulate", "--scenario", path_str(&sc), "--out", path_str(&csv)]);
    assert_eq!(code(&out), 0, "{}", message(&out));

    let mut rdr = csv::Reader::from_path(&csv).unwrap();
    let header = rdr.headers().unwrap().clone();
    assert_eq!(&header[0], "time");
    assert_eq!(&header[1], "e_norm");
    assert!(header.iter().any(|h| h == "dhat") && header.iter().any(|h| h == "sat_active"));
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert!(rows.len() > 100);
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), 0.0);

    let report_text = std::fs::read_to_string(dir.path().join("run.json")).unwrap();
    let report: Value = serde_json::from_str(&report_text).unwrap();
    let parsed: dobbench::sim::PerformanceReport = serde_json::from_value(report["report"].clone()).unwrap();
    assert_eq!(serde_json::to_value(&parsed).unwrap(), report["report"]);
    assert!(parsed.tail_sup_e <= parsed.sup_e);
}

#[test]
fn simulate_is_reproducible_and_seed_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let sc = short_benchmark(dir.path(), |v| {
        v["sim"]["noise"] = serde_json::json!({"kind": "uniform", "mu": 0.01});
    });
    let run = |name: &str, seed: &str| {
        let csv = dir.path().join(name);
        let out = dobbench(&["simulate", "--scenario", path_str(&sc), "--out", path_str(&csv), "--seed", seed]);
        assert_eq!(code(&out), 0);
        std::fs::read(&csv).unwrap()
    };
    assert_eq!(run("a.csv", "5"), run("b.csv", "5"));
    assert_ne!(run("a.csv", "5"), run("c.csv", "6"));
}

#[test]
fn missing_tau_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let sc = short_benchmark(dir.path(), |v| {
        v["qfilter"].as_object_mut().unwrap().remove("tau");
    });
    let out = dobbench(&["simulate", "--scenario", path_str(&sc), "--out", path_str(&dir.path().join("x.csv"))]);
    assert_eq!(code(&out), 1);
    let err = message(&out);
    assert!(err.contains("/qfilter") && err.contains("tau"), "{err}");
}

#[test]
fn bad_value_reports_json_pointer() {
    let dir = tempfile::tempdir().unwrap();
    let sc = short_benchmark(dir.path(), |v| {
        v["plant"]["phi"][1] = "fast".into();
    });
    let out = dobbench(&["design", "--scenario", path_str(&sc)]);
    assert_eq!(code(&out), 1);
    assert!(message(&out).contains("/plant/phi/1"));
}

#[test]
fn divergent_plant_exits_two_with_partial_csv() {
    let dir = tempfile::tempdir().unwrap();
    let sc = short_benchmark(dir.path(), |v| {
        v["plant"]["phi"] = serde_json::json!([5.0, 5.0]);
        v["sim"]["horizon"] = 30.0.into();
    });
    let csv = dir.path().join("div.csv");
    let out = dobbench(&["simulate", "--scenario", path_str(&sc), "--out", path_str(&csv)]);
    assert_eq!(code(&out), 2, "{}", message(&out));
    let rows = csv::Reader::from_path(&csv).unwrap().records().count();
    assert!(rows > 0);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("div.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["diverged"], Value::Bool(true));
    assert!(report["diverged_at"].as_f64().unwrap() < 30.0);
}

#[test]
fn design_noise_free_has_zero_lower_bound() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("design.json");
    let bench = scenarios().join("benchmark.json");
    let out = dobbench(&["design", "--scenario", path_str(&bench), "--mu", "0", "--out", path_str(&json)]);
    assert_eq!(code(&out), 0);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["tau_lower"].as_f64(), Some(0.0));
    let parsed: dobbench::design::DesignResult = serde_json::from_value(v.clone()).unwrap();
    assert_eq!(serde_json::to_value(&parsed).unwrap(), v);
}

fn design_json(dir: &Path, scenario: &Path, extra: &[&str]) -> (u8, Value) {
    let json = dir.join("design.json");
    let mut args = vec!["design", "--scenario", path_str(scenario), "--out", path_str(&json)];
    args.extend_from_slice(extra);
    let out = dobbench(&args);
    let v = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    (code(&out), v)
}

#[test]
fn design_above_threshold_is_infeasible_and_small_mu_brackets_minimiser() {
    let dir = tempfile::tempdir().unwrap();
    let bench = scenarios().join("design_benchmark.json");
    let star = design_json(dir.path(), &bench, &[]).1["mu_star"].as_f64().unwrap();

    let over = dobbench(&["design", "--scenario", path_str(&bench), "--mu", &format!("{:e}", 2.0 * star)]);
    assert_eq!(code(&over), 3);
    assert!(message(&over).contains("infeasible"));

    let (c, v) = design_json(dir.path(), &bench, &["--mu", &format!("{:e}", star / 100.0)]);
    assert_eq!(c, 0);
    let (lo, dag, hi) = (
        v["tau_lo"].as_f64().unwrap(),
        v["tau_dagger"].as_f64().unwrap(),
        v["tau_hi"].as_f64().unwrap(),
    );
    assert!(lo < dag && dag < hi, "{lo} {dag} {hi}");
}

#[test]
fn settle_eig_switch_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let bench = scenarios().join("design_benchmark.json");
    let (_, v) = design_json(dir.path(), &bench, &["--settle-eig", "f"]);
    assert_eq!(v["constants"]["settle_eig"], Value::from("f"));
    let bad = dobbench(&["design", "--scenario", path_str(&bench), "--settle-eig", "x"]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn sweep_two_points_and_seed_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let sc = short_benchmark(dir.path(), |_| {});
    let csv = dir.path().join("sweep.csv");
    let out = dobbench(&[
        "sweep", "--scenario", path_str(&sc), "--tau-min", "0.01", "--tau-max", "0.1", "--points", "2", "--out",
        path_str(&csv), "--seed", "11",
    ]);
    assert_eq!(code(&out), 0);
    let mut rdr = csv::Reader::from_path(&csv).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().take(4).collect::<Vec<_>>(), ["tau", "sup_e", "tail_sup_e", "saturation_fraction"]);
    assert_eq!(rdr.records().count(), 2);
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], Value::from(11));
    assert!(meta["reports"].as_array().unwrap().iter().all(|r| r["seed"] == 11));
}

#[test]
fn sweep_rejects_misordered_grid() {
    let dir = tempfile::tempdir().unwrap();
    let sc = short_benchmark(dir.path(), |_| {});
    let out = dobbench(&[
        "sweep", "--scenario", path_str(&sc), "--tau-min", "0.1", "--tau-max", "0.01", "--points", "3", "--out",
        path_str(&dir.path().join("s.csv")),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn verify_noise_free_notes_zero_lower_bound() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(scenarios().join("design_benchmark.json")).unwrap();
    let mut v: Value = serde_json::from_str(&text).unwrap();
    v["sim"]["horizon"] = 0.5.into();
    let sc = dir.path().join("d.json");
    std::fs::write(&sc, v.to_string()).unwrap();
    let report = dir.path().join("verify.json");
    let out = dobbench(&[
        "verify", "--scenario", path_str(&sc), "--probes", "2", "--check-horizon", "0.2", "--out", path_str(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", message(&out));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["design"]["tau_lower"].as_f64(), Some(0.0));
    assert!(r["notes"].as_array().unwrap().iter().any(|n| n.as_str().unwrap().contains("tau_lower = 0")));
    assert_eq!(r["pass"], Value::Bool(true));
}

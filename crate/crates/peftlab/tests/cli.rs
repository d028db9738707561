use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_peftlab"));
    c.env_remove("PEFTLAB_JOBS");
    c
}

fn manifest(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(rel)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Every artifact in `dir` keyed by file name, with the wall time removed from report.json.
fn artifacts(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let mut text = std::fs::read_to_string(&path).unwrap();
        if name == "report.json" {
            let mut v: Value = serde_json::from_str(&text).unwrap();
            v.as_object_mut().unwrap().remove("wall_time_seconds");
            text = serde_json::to_string_pretty(&v).unwrap();
        }
        out.insert(name, text);
    }
    out
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = run(&["verify-capacity", "--bogus", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn unknown_subcommand_and_missing_out_are_usage_errors() {
    assert_eq!(run(&["verify-everything", "--out", "x"]).status.code(), Some(2));
    assert_eq!(run(&["verify-capacity", "--seed", "1"]).status.code(), Some(2));
}

#[test]
fn help_exits_zero() {
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("full-suite"));
}

#[test]
fn malformed_config_reports_line_column_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = manifest("tests/fixtures/misspelled_field.json");
    let o = run(&["verify-capacity", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("misspelled_field.json:6:"), "{err}");
    assert!(err.contains("bound_scal"), "{err}");
}

#[test]
fn syntax_error_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, "{\n  \"schema_version\": \"1\",\n  \"seed\": 4,,\n}\n").unwrap();
    let o = run(&["verify-capacity", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.json:3:"), "{}", stderr(&o));
}

#[test]
fn schema_range_violation_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"schema_version":"1","seed":1,"dist_stats":{"bins":1}}"#).unwrap();
    let o = run(&["dist-stats", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/dist_stats/bins"), "{}", stderr(&o));
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify-subspace", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
}

#[test]
fn corrupted_bound_fails_with_counterexample() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = manifest("tests/fixtures/corrupted_bound.json");
    let o = run(&["verify-capacity", "--config", cfg.to_str().unwrap(), "--seed", "42", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let cx: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("counterexample.json")).unwrap()).unwrap();
    assert!(cx["deviation"].as_f64().unwrap() > cx["bound"].as_f64().unwrap());
    assert!(cx["net"]["layers"].as_array().is_some_and(|l| !l.is_empty()));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "fail");
}

#[test]
fn capacity_csv_has_one_row_per_trial() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["verify-capacity", "--seed", "42", "--jobs", "4", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(dir.path().join("capacity.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().get(0), Some("trial"));
    assert_eq!(rdr.records().count(), 1000);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["schema_version"], "1");
    assert_eq!(report["sections"][0]["status"], "pass");
    assert!(std::fs::read_to_string(dir.path().join("summary.md")).unwrap().contains("capacity"));
}

#[test]
fn artifacts_do_not_depend_on_job_count_or_rerun() {
    let cfg = manifest("configs/quick.json");
    let cfg = cfg.to_str().unwrap();
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for (dir, jobs) in dirs.iter().zip(["1", "4", "4"]) {
        let o = run(&["full-suite", "--config", cfg, "--jobs", jobs, "--out", dir.path().to_str().unwrap()]);
        assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    }
    let first = artifacts(dirs[0].path());
    assert!(first.contains_key("capacity.csv") && first.contains_key("scaling.csv"));
    for d in &dirs[1..] {
        let other = artifacts(d.path());
        assert_eq!(first.keys().collect::<Vec<_>>(), other.keys().collect::<Vec<_>>());
        for (name, body) in &first {
            assert!(body == &other[name], "{name} differs");
        }
    }
}

#[test]
fn jobs_env_var_is_a_fallback() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = manifest("configs/quick.json");
    let o = bin()
        .env("PEFTLAB_JOBS", "3")
        .args(["verify-perturbation", "--config", cfg.to_str().unwrap(), "--out", a.path().to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = run(&["verify-perturbation", "--config", cfg.to_str().unwrap(), "--jobs", "1", "--out", b.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(artifacts(a.path()), artifacts(b.path()));
}

#[test]
fn measured_only_sections_do_not_gate_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = manifest("configs/quick.json");
    let o = run(&["dist-stats", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["sections"][0]["status"], "measured-only");
}

#[test]
fn shipped_configs_load() {
    for name in ["configs/default.json", "configs/quick.json"] {
        let text = std::fs::read_to_string(manifest(name)).unwrap();
        let cfg = peftlab::config::ExperimentConfig::parse(&text, name).unwrap().resolve(None).unwrap();
        assert_eq!(cfg.seed, 42);
    }
    let text = std::fs::read_to_string(manifest("configs/default.json")).unwrap();
    let cfg = peftlab::config::ExperimentConfig::parse(&text, "default").unwrap().resolve(None).unwrap();
    let defaults = peftlab::config::ExperimentConfig::default().resolve(Some(42)).unwrap();
    assert_eq!(cfg, defaults);
}

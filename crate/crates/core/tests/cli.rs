use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL_COV: &str = r#"{
  "model": {"alpha": 0.75, "dim": 1, "law": {"kind": "binary"}, "branch_rate": 1.0},
  "window": {"half_width": 20.0},
  "horizons": [1.0],
  "out_grid": [0.5, 1.0],
  "dense_step": 0.125,
  "replicas": 400,
  "master_seed": 3,
  "comparisons": ["poisson_cov"]
}"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occfluct")).args(args).output().expect("binary runs")
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn check_cov_small_run_passes_with_csv_header() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "cov.json", SMALL_COV);
    let o = run(&["check-cov", "--config", &cfg, "--reproducible"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("name,T,s,t,estimate,se,oracle,z"));
    assert_eq!(lines.count(), 3);
}

#[test]
fn worker_count_does_not_change_output() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "cov.json", SMALL_COV);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for (w, p) in [("1", &a), ("4", &b)] {
        let o = run(&["check-cov", "--config", &cfg, "--workers", w, "--reproducible", "--out", p.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "cov.json", SMALL_COV);
    let a = run(&["check-cov", "--config", &cfg, "--reproducible", "--replicas", "50"]);
    let b = run(&["check-cov", "--config", &cfg, "--reproducible", "--replicas", "50", "--seed", "4"]);
    assert_ne!(a.stdout, b.stdout);
}

#[test]
fn json_report_carries_metadata() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "cov.json", SMALL_COV);
    let out = dir.path().join("report.json");
    let o = run(&["check-cov", "--config", &cfg, "--replicas", "40", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["metadata"]["replicas"], 40);
    assert_eq!(v["metadata"]["config_hash"].as_str().unwrap().len(), 64);
    assert!(v["metadata"]["wall_time_s"].is_number());
    assert_eq!(v["records"].as_array().unwrap().len(), 3);
}

#[test]
fn biased_window_is_a_statistical_failure() {
    // a torus of width 3 inflates the covariance far beyond the R^d oracle
    let dir = TempDir::new().unwrap();
    let text = SMALL_COV.replace("\"half_width\": 20.0", "\"half_width\": 1.5").replace("400", "3000");
    let cfg = write(&dir, "bad.json", &text);
    let o = run(&["check-cov", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("FAILED poisson_cov"));
}

#[test]
fn unknown_key_is_a_config_error_with_line() {
    let dir = TempDir::new().unwrap();
    let text = SMALL_COV.replace("\"replicas\": 400,", "\"replicas\": 400,\n  \"replica\": 3,");
    let cfg = write(&dir, "typo.json", &text);
    let o = run(&["check-cov", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("line 8"), "{err}");
    assert!(err.contains("replica"), "{err}");
}

#[test]
fn semantic_error_points_at_the_field() {
    let dir = TempDir::new().unwrap();
    let text = SMALL_COV.replace("\"alpha\": 0.75", "\"alpha\": 0.4");
    let cfg = write(&dir, "regime.json", &text);
    let o = run(&["check-limit", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn malformed_json_and_missing_file() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "broken.json", "{\n  \"model\": {\n}\n");
    let o = run(&["simulate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
    let missing = dir.path().join("nope.json");
    let o = run(&["check-cov", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["check-cov"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_flags_exit_with_config_code() {
    assert_eq!(run(&["check-cov", "--workers", "many"]).status.code(), Some(2));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn gfacts_default_suite_passes() {
    let o = run(&["gfacts"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.starts_with("law,index,check,value,passed\n"));
    assert!(!out.lines().skip(1).any(|l| l.ends_with(",false")));
    // 3 builtins and 50 fuzzed laws
    assert!(out.contains(",52,M,"));
}

#[test]
fn gfacts_rejects_unknown_law() {
    assert_eq!(run(&["gfacts", "--law", "ternary"]).status.code(), Some(2));
}

#[test]
fn b3_identity_default_cases() {
    let o = run(&["b3-identity"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert_eq!(out.lines().count(), 7);
    assert!(out.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn sample_limit_writes_paths() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("paths.csv");
    let o = run(&[
        "sample-limit", "--kind", "subfractional", "--h", "1.5", "--grid", "16", "--paths", "3", "--seed", "1",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,path0,path1,path2");
    assert_eq!(lines.len(), 17);
    assert_eq!(run(&["sample-limit", "--kind", "fractional", "--h", "2.5"]).status.code(), Some(2));
}

#[test]
fn simulate_dumps_long_format() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "sim.json", SMALL_COV);
    let o = run(&["simulate", "--config", &cfg, "--replicas", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.starts_with("replica,T,phi,t,value\n"));
    assert_eq!(out.lines().count(), 1 + 5 * 2);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_string();
        let text = std::fs::read_to_string(&path).unwrap();
        let ok = if name.starts_with("gfacts") {
            occfluct::config::parse::<occfluct::config::GFactsConfig>(&text).is_ok()
        } else if name.starts_with("b3") {
            occfluct::config::parse::<occfluct::config::B3Config>(&text).is_ok()
        } else if name.starts_with("sample_limit") {
            occfluct::config::parse::<occfluct::config::SampleLimitConfig>(&text).is_ok()
        } else {
            occfluct::config::parse_experiment(&text).is_ok()
        };
        assert!(ok, "{name}");
    }
}

//! Variance of `⟨X_T(t), φ⟩` over a ladder of horizons against the
//! sub-fractional limit covariance. Replica count is kept small here.

use occfluct::config::parse_experiment;
use occfluct::mc_stats::run_experiment;

const CONFIG: &str = r#"{
  "model": {"alpha": 0.75, "dim": 1, "law": {"kind": "binary"}, "branch_rate": 1.0},
  "horizons": [4.0, 16.0],
  "out_grid": [0.5, 1.0],
  "dense_step": 0.00390625,
  "replicas": 200,
  "master_seed": 5,
  "comparisons": ["theorem_variance", "theorem_cross_cov", "space_time_var"]
}"#;

fn main() -> occfluct::Result<()> {
    let spec = parse_experiment(CONFIG)?;
    let report = run_experiment(&spec, 1)?;
    for arm in &report.metadata.arms {
        println!("T = {}: half-width {:.1}, {} replicas", arm.horizon, arm.half_width, arm.used);
    }
    for r in &report.records {
        println!(
            "{:<18} T={:<4} ({}, {}) ratio {:.3} ± {:.3}",
            r.name,
            r.horizon,
            r.s,
            r.t,
            r.ratio.unwrap_or(f64::NAN),
            r.se / r.oracle
        );
    }
    Ok(())
}

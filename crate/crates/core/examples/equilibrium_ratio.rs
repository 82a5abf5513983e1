//! Equilibrium versus Poisson start: ratio of the variances of `⟨X_T(t), φ⟩`
//! and the limiting value `c_h(t,t) / C_h(t,t)`.

use occfluct::config::parse_experiment;
use occfluct::limit_oracle::{equilibrium_ratio_oracle, hurst};
use occfluct::mc_stats::run_experiment;

const CONFIG: &str = r#"{
  "model": {"alpha": 0.75, "dim": 1, "law": {"kind": "binary"}, "branch_rate": 1.0},
  "init": "equilibrium",
  "burn_factor": 4.0,
  "horizons": [8.0],
  "out_grid": [0.5, 1.0],
  "dense_step": 0.0078125,
  "replicas": 200,
  "master_seed": 9,
  "comparisons": ["equilibrium_ratio"]
}"#;

fn main() -> occfluct::Result<()> {
    let spec = parse_experiment(CONFIG)?;
    let h = hurst(0.75, 1)?;
    println!("h = {h:.4}, limit ratio at t=1: {:.4}", equilibrium_ratio_oracle(1.0, h));
    let report = run_experiment(&spec, 1)?;
    for r in &report.records {
        println!("T={} t={}: ratio {:.3} ± {:.3} (limit {:.3})", r.horizon, r.t, r.estimate, r.se, r.oracle);
    }
    Ok(())
}

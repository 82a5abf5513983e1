//! Strict JSON configuration files with line-anchored error messages.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::limit_oracle::PathKind;
use crate::mc_stats::{ExperimentSpec, ModelSpec};
use crate::occupation::{TestFunction, TimeWeight};
use crate::offspring::OffspringLaw;
use crate::quadrature::QuadConfig;

/// Settings of the `gfacts` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GFactsConfig {
    #[serde(default = "default_laws")]
    pub laws: Vec<OffspringLaw>,
    /// Number of random critical finite-support laws added to `laws`.
    #[serde(default = "default_fuzzed")]
    pub fuzzed: usize,
    #[serde(default = "default_fuzz_max_k")]
    pub fuzz_max_k: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_laws() -> Vec<OffspringLaw> {
    vec![OffspringLaw::binary(), OffspringLaw::geometric_critical(), OffspringLaw::poisson_unit()]
}
fn default_fuzzed() -> usize {
    50
}
fn default_fuzz_max_k() -> u32 {
    12
}

impl Default for GFactsConfig {
    fn default() -> Self {
        Self { laws: default_laws(), fuzzed: default_fuzzed(), fuzz_max_k: default_fuzz_max_k(), seed: 0 }
    }
}

/// One `(α, d)` case of the integration-by-parts identity check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct B3Case {
    pub alpha: f64,
    pub dim: usize,
    #[serde(default = "one")]
    pub branch_rate: f64,
}

fn one() -> f64 {
    1.0
}

/// Settings of the `b3-identity` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct B3Config {
    #[serde(default = "default_cases")]
    pub cases: Vec<B3Case>,
    #[serde(default = "default_weights")]
    pub weights: Vec<TimeWeight>,
    /// Allowed `|residual| / max(|lhs|, |rhs|)`.
    #[serde(default = "default_b3_tol")]
    pub tolerance: f64,
    #[serde(default = "default_b3_quad")]
    pub quad: QuadConfig,
}

fn default_cases() -> Vec<B3Case> {
    vec![
        B3Case { alpha: 0.75, dim: 1, branch_rate: 1.0 },
        B3Case { alpha: 1.2, dim: 2, branch_rate: 1.0 },
        B3Case { alpha: 1.8, dim: 3, branch_rate: 1.0 },
    ]
}
fn default_weights() -> Vec<TimeWeight> {
    vec![
        TimeWeight::constant(1.0).expect("valid"),
        TimeWeight::gaussian_bump(0.5, 0.15).expect("valid"),
    ]
}
fn default_b3_tol() -> f64 {
    1e-8
}
fn default_b3_quad() -> QuadConfig {
    QuadConfig { rel_tol: 1e-11, abs_tol: 1e-300, max_panels: 20_000 }
}

impl Default for B3Config {
    fn default() -> Self {
        Self { cases: default_cases(), weights: default_weights(), tolerance: default_b3_tol(), quad: default_b3_quad() }
    }
}

/// Settings of the `sample-limit` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleLimitConfig {
    pub kind: PathKind,
    /// Index of the process; with `model` absent the paths are standard
    /// (unit variance at `t = 1` for the fractional kind).
    #[serde(default)]
    pub h: Option<f64>,
    /// When present, `h` and the scale `M K ⟨λ,φ⟩²` come from the model.
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub phi: Option<TestFunction>,
    #[serde(default = "default_grid_points")]
    pub grid: usize,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_grid_points() -> usize {
    64
}
fn default_paths() -> usize {
    1
}

/// 1-based line of byte offset `pos`.
fn line_of(text: &str, pos: usize) -> usize {
    text[..pos.min(text.len())].matches('\n').count() + 1
}

/// Line holding the first occurrence of the key `"field"`, if any.
fn line_of_key(text: &str, field: &str) -> Option<usize> {
    let needle = format!("\"{field}\"");
    text.find(&needle).map(|p| line_of(text, p))
}

fn anchored(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line}: {msg}"))
}

/// Parses strict JSON; errors carry the line of the offending token.
pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        // serde_json appends " at line L column C"; keep the message only
        let bare = msg.split(" at line ").next().unwrap_or(&msg).to_string();
        anchored(e.line().max(1), format!("{bare} (column {})", e.column()))
    })
}

/// Parses and validates an experiment; semantic errors are anchored at the
/// line of the field they concern.
pub fn parse_experiment(text: &str) -> Result<ExperimentSpec> {
    let spec: ExperimentSpec = parse(text)?;
    spec.validate().map_err(|e| match e {
        Error::Config(msg) => {
            let field = msg.split(':').next().unwrap_or("").trim();
            let line = line_of_key(text, field).unwrap_or(1);
            anchored(line, msg)
        }
        other => anchored(1, other),
    })?;
    Ok(spec)
}

pub fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("line 0: cannot read {}: {e}", path.display())))
}

pub fn load_experiment(path: &Path) -> Result<ExperimentSpec> {
    parse_experiment(&read(path)?)
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse(&read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{
  "model": {
    "alpha": 0.75,
    "dim": 1,
    "law": {"kind": "binary"},
    "branch_rate": 1.0
  },
  "horizons": [1.0],
  "out_grid": [0.5, 1.0],
  "dense_step": 0.125,
  "replicas": 4,
  "comparisons": ["poisson_cov"]
}"#;

    #[test]
    fn accepts_valid_experiment() {
        let spec = parse_experiment(GOOD).unwrap();
        assert_eq!(spec.replicas, 4);
        assert_eq!(spec.phis.len(), 1);
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let text = GOOD.replace("\"dim\": 1,", "\"dim\": 1,\n    \"dimension\": 1,");
        let err = parse_experiment(&text).unwrap_err().to_string();
        assert!(err.contains("line 5"), "{err}");
        assert!(err.contains("dimension"), "{err}");
    }

    #[test]
    fn semantic_error_points_at_field() {
        let text = GOOD.replace("\"replicas\": 4", "\"replicas\": 1");
        let err = parse_experiment(&text).unwrap_err().to_string();
        assert!(err.contains("line 11"), "{err}");
        let text = GOOD.replace("\"alpha\": 0.75", "\"alpha\": 1.5");
        let err = parse_experiment(&text).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn syntax_error_has_line() {
        let text = GOOD.replace("\"replicas\": 4,", "\"replicas\": 4");
        let err = parse_experiment(&text).unwrap_err().to_string();
        assert!(err.contains("line 12"), "{err}");
    }
}

//! Replicated experiments: deterministic per-replica streams, jackknife
//! standard errors, oracle comparisons and JSON / CSV reports.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::limit_oracle::{
    equilibrium_ratio_oracle, limit_pairing_variance, poisson_system_covariance, theorem_covariance,
    LimitParams, Mode,
};
use crate::occupation::{
    compute_n, dense_grid, estimate_v, norming, occupation_fluctuation, space_time_pairing,
    AncestorQuery, TestFunction, TimeWeight,
};
use crate::offspring::OffspringLaw;
use crate::particle_system::{
    evolve_and_observe, initialize, Boundary, InitKind, SimConfig, SimulationWindow,
    DEFAULT_EVENT_CAP, DEFAULT_TRUNCATION_EPSILON,
};
use crate::quadrature::QuadConfig;
use crate::stable_motion::StableParams;

/// Largest tolerated fraction of aborted replicas.
pub const MAX_ABORT_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonKind {
    PoissonCov,
    TheoremVariance,
    TheoremCrossCov,
    SpaceTimeVar,
    VVsN,
    EquilibriumRatio,
}

impl ComparisonKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::PoissonCov => "poisson_cov",
            Self::TheoremVariance => "theorem_variance",
            Self::TheoremCrossCov => "theorem_cross_cov",
            Self::SpaceTimeVar => "space_time_var",
            Self::VVsN => "v_vs_n",
            Self::EquilibriumRatio => "equilibrium_ratio",
        }
    }

    /// Pass/fail rule; convergence ladders are reported but not gated.
    pub fn gate(&self) -> Gate {
        match self {
            Self::PoissonCov => Gate::TwoSided { max_z: 4.0 },
            Self::VVsN => Gate::Upper { max_z: 3.0 },
            _ => Gate::Report,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Gate {
    /// Fails when `|z| > max_z`.
    TwoSided { max_z: f64 },
    /// Fails when `z > max_z`.
    Upper { max_z: f64 },
    Report,
}

impl Gate {
    pub fn passes(&self, z: Option<f64>) -> Option<bool> {
        match (self, z) {
            (Gate::Report, _) => None,
            (_, None) => Some(true),
            (Gate::TwoSided { max_z }, Some(z)) => Some(z.abs() <= *max_z),
            (Gate::Upper { max_z }, Some(z)) => Some(z <= *max_z),
        }
    }
}

/// Motion, offspring law and branching rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub alpha: f64,
    pub dim: usize,
    pub law: OffspringLaw,
    pub branch_rate: f64,
    #[serde(default = "default_event_cap")]
    pub event_cap: u64,
}

fn default_event_cap() -> u64 {
    DEFAULT_EVENT_CAP
}

impl ModelSpec {
    pub fn stable(&self) -> StableParams {
        StableParams { alpha: self.alpha, dim: self.dim }
    }

    pub fn limit_params(&self) -> Result<LimitParams> {
        LimitParams::new(self.alpha, self.dim, self.branch_rate, self.law.second_factorial_moment())
    }
}

/// Window: a fixed half-width, or the truncation rule when omitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    #[serde(default)]
    pub half_width: Option<f64>,
    #[serde(default = "default_eps")]
    pub truncation_epsilon: f64,
    #[serde(default)]
    pub boundary: Boundary,
}

fn default_eps() -> f64 {
    DEFAULT_TRUNCATION_EPSILON
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { half_width: None, truncation_epsilon: DEFAULT_TRUNCATION_EPSILON, boundary: Boundary::Periodic }
    }
}

/// Initial condition of the observed system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitSpec {
    #[default]
    Poisson,
    Equilibrium,
}

impl InitSpec {
    pub fn mode(&self) -> Mode {
        match self {
            InitSpec::Poisson => Mode::Poisson,
            InitSpec::Equilibrium => Mode::Equilibrium,
        }
    }
}

/// Grid of single-ancestor queries for the `v <= n` check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VCheckSpec {
    /// Distances of the ancestor from the origin along the first axis.
    #[serde(default = "default_v_points")]
    pub points: Vec<f64>,
    /// `t / T` values; `r = T - t`.
    #[serde(default = "default_v_fractions")]
    pub time_fractions: Vec<f64>,
    #[serde(default = "default_v_reps")]
    pub reps: usize,
    #[serde(default = "default_v_steps")]
    pub steps: usize,
}

fn default_v_points() -> Vec<f64> {
    vec![0.0, 1.0, 3.0]
}
fn default_v_fractions() -> Vec<f64> {
    vec![0.5, 1.0]
}
fn default_v_reps() -> usize {
    2000
}
fn default_v_steps() -> usize {
    256
}

impl Default for VCheckSpec {
    fn default() -> Self {
        Self {
            points: default_v_points(),
            time_fractions: default_v_fractions(),
            reps: default_v_reps(),
            steps: default_v_steps(),
        }
    }
}

/// A declarative experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub model: ModelSpec,
    #[serde(default)]
    pub init: InitSpec,
    /// Burn-in of the equilibrium start in units of `T`.
    #[serde(default = "default_burn_factor")]
    pub burn_factor: f64,
    #[serde(default)]
    pub window: WindowSpec,
    #[serde(default = "default_phis")]
    pub phis: Vec<TestFunction>,
    #[serde(default = "default_weight")]
    pub weight: TimeWeight,
    pub horizons: Vec<f64>,
    pub out_grid: Vec<f64>,
    /// Dense observation step in units of `T`.
    #[serde(default = "default_dense_step")]
    pub dense_step: f64,
    pub replicas: usize,
    #[serde(default)]
    pub master_seed: u64,
    pub comparisons: Vec<ComparisonKind>,
    #[serde(default)]
    pub v_check: VCheckSpec,
    #[serde(default)]
    pub quad: QuadConfig,
}

fn default_burn_factor() -> f64 {
    4.0
}
fn default_phis() -> Vec<TestFunction> {
    vec![TestFunction::standard(1)]
}
fn default_weight() -> TimeWeight {
    TimeWeight::constant(1.0).expect("constant weight is valid")
}
fn default_dense_step() -> f64 {
    1.0 / 512.0
}

impl ExperimentSpec {
    /// Checks every invariant; the message names the offending field first.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        let m = &self.model;
        if let Err(e) = m.stable().validate() {
            return bad("alpha", e.to_string());
        }
        if let Err(e) = m.limit_params() {
            return bad("alpha", e.to_string());
        }
        if !(m.branch_rate > 0.0 && m.branch_rate.is_finite()) {
            return bad("branch_rate", "must be positive".into());
        }
        if m.event_cap == 0 {
            return bad("event_cap", "must be positive".into());
        }
        if self.replicas < 2 {
            return bad("replicas", format!("need at least 2, got {}", self.replicas));
        }
        if self.horizons.is_empty()
            || self.horizons.iter().any(|t| !(*t > 0.0 && t.is_finite()))
            || self.horizons.windows(2).any(|w| !(w[1] > w[0]))
        {
            return bad("horizons", "must be positive and strictly increasing".into());
        }
        if self.out_grid.is_empty()
            || self.out_grid.iter().any(|t| !(0.0..=1.0).contains(t))
            || self.out_grid.windows(2).any(|w| !(w[1] > w[0]))
        {
            return bad("out_grid", "must be strictly increasing in [0, 1]".into());
        }
        if !(self.dense_step > 0.0 && self.dense_step <= 1.0) {
            return bad("dense_step", "must lie in (0, 1]".into());
        }
        for &t in &self.horizons {
            if let Err(e) = dense_grid(t, t * self.dense_step) {
                return bad("dense_step", e.to_string());
            }
            let n = (1.0 / self.dense_step).round();
            for &s in &self.out_grid {
                if ((s * n).round() - s * n).abs() > 1e-9 * n {
                    return bad("out_grid", format!("point {s} is not a multiple of dense_step"));
                }
            }
        }
        if self.phis.is_empty() {
            return bad("phis", "need at least one test function".into());
        }
        for p in &self.phis {
            if let Err(e) = p.validate() {
                return bad("phis", e.to_string());
            }
            if p.dim() != m.dim {
                return bad("phis", format!("test function has dimension {}, model has {}", p.dim(), m.dim));
            }
        }
        if !(self.burn_factor >= 0.0 && self.burn_factor.is_finite()) {
            return bad("burn_factor", "must be non-negative".into());
        }
        if let Some(l) = self.window.half_width {
            if !(l > 0.0 && l.is_finite()) {
                return bad("half_width", "must be positive".into());
            }
        }
        if !(self.window.truncation_epsilon > 0.0) {
            return bad("truncation_epsilon", "must be positive".into());
        }
        if self.comparisons.is_empty() {
            return bad("comparisons", "list is empty".into());
        }
        let needs_oracle_quadrature = self.comparisons.iter().any(|c| {
            matches!(c, ComparisonKind::PoissonCov | ComparisonKind::VVsN)
        });
        if needs_oracle_quadrature && m.dim > crate::stable_motion::MAX_ORACLE_DIM {
            return bad("dim", "quadrature oracles support d <= 3".into());
        }
        if self.comparisons.contains(&ComparisonKind::VVsN) {
            let v = &self.v_check;
            if v.reps < 2 || v.steps == 0 || v.points.is_empty() || v.time_fractions.is_empty() {
                return bad("v_check", "needs points, time fractions, reps >= 2 and steps >= 1".into());
            }
            if v.time_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
                return bad("time_fractions", "must lie in (0, 1]".into());
            }
        }
        Ok(())
    }

    /// Simulation config for one horizon and initial condition.
    pub fn sim_config(&self, init: InitSpec, horizon: f64) -> Result<SimConfig> {
        let stable = self.model.stable();
        let (init_kind, total) = match init {
            InitSpec::Poisson => (InitKind::Poisson, horizon),
            InitSpec::Equilibrium => {
                let t_burn = self.burn_factor * horizon;
                (InitKind::Equilibrium { t_burn }, t_burn + horizon)
            }
        };
        let window = match self.window.half_width {
            Some(l) => SimulationWindow::new(l, self.window.truncation_epsilon, self.window.boundary)?,
            None => SimulationWindow::for_horizon(
                &stable,
                &self.phis,
                total,
                self.window.truncation_epsilon,
                self.window.boundary,
            )?,
        };
        Ok(SimConfig {
            stable,
            law: self.model.law.clone(),
            branch_rate: self.model.branch_rate,
            init: init_kind,
            window,
            event_cap: self.model.event_cap,
        })
    }

    /// SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("spec serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Sample covariance with a jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovEstimate {
    pub estimate: f64,
    pub se: f64,
    /// Set when a column has zero variance.
    pub degenerate: bool,
}

/// Unbiased covariance of columns `i` and `j` of a replicas × k matrix.
///
/// The standard error is the jackknife over replicas (computed in closed
/// form from leave-one-out sums); with two replicas it falls back to the
/// Gaussian approximation `sqrt((s_ii s_jj + s_ij²)/(n-1))`.
pub fn empirical_cov(samples: &[Vec<f64>], i: usize, j: usize) -> Result<CovEstimate> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidParameter("covariance needs at least 2 replicas".into()));
    }
    let col = |k: usize| -> Result<Vec<f64>> {
        samples
            .iter()
            .map(|row| {
                row.get(k)
                    .copied()
                    .ok_or_else(|| Error::InvalidParameter(format!("column {k} out of range")))
            })
            .collect()
    };
    let x = col(i)?;
    let y = col(j)?;
    Ok(cov_of(&x, &y))
}

/// Covariance of two paired samples (at least 2) with its jackknife error.
pub fn cov_of(x: &[f64], y: &[f64]) -> CovEstimate {
    assert!(x.len() == y.len() && x.len() >= 2, "paired samples of length >= 2 required");
    let n = x.len();
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let a: Vec<f64> = x.iter().map(|v| v - mx).collect();
    let b: Vec<f64> = y.iter().map(|v| v - my).collect();
    let sab: f64 = a.iter().zip(&b).map(|(p, q)| p * q).sum();
    let estimate = sab / (nf - 1.0);
    let degenerate = a.iter().all(|v| *v == 0.0) || b.iter().all(|v| *v == 0.0);
    if degenerate {
        return CovEstimate { estimate, se: 0.0, degenerate };
    }
    let se = if n < 3 {
        let saa: f64 = a.iter().map(|v| v * v).sum::<f64>() / (nf - 1.0);
        let sbb: f64 = b.iter().map(|v| v * v).sum::<f64>() / (nf - 1.0);
        ((saa * sbb + estimate * estimate) / (nf - 1.0)).sqrt()
    } else {
        // leave-one-out covariance from the centred sums (Σa = Σb = 0)
        let loo: Vec<f64> = a
            .iter()
            .zip(&b)
            .map(|(p, q)| (sab - p * q - p * q / (nf - 1.0)) / (nf - 2.0))
            .collect();
        let mean = loo.iter().sum::<f64>() / nf;
        let ss: f64 = loo.iter().map(|c| (c - mean) * (c - mean)).sum();
        ((nf - 1.0) / nf * ss).sqrt()
    };
    CovEstimate { estimate, se, degenerate }
}

/// Ratio of two independently estimated variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    pub ratio: f64,
    pub se: f64,
    /// Set when the denominator is zero.
    pub degenerate: bool,
}

/// `Var_eq / Var_poisson` with a delta-method standard error.
pub fn equilibrium_ratio(poisson: (f64, f64), equilibrium: (f64, f64)) -> RatioEstimate {
    let (vp, sp) = poisson;
    let (ve, se) = equilibrium;
    if vp == 0.0 {
        return RatioEstimate { ratio: f64::NAN, se: f64::NAN, degenerate: true };
    }
    let ratio = ve / vp;
    let rel_e = if ve != 0.0 { se / ve } else { 0.0 };
    let rel = (rel_e * rel_e + (sp / vp) * (sp / vp)).sqrt();
    RatioEstimate { ratio, se: ratio.abs() * rel, degenerate: false }
}

/// One comparison line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub name: String,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub s: f64,
    pub t: f64,
    pub estimate: f64,
    pub se: f64,
    pub oracle: f64,
    pub z: Option<f64>,
    pub ratio: Option<f64>,
    pub passed: Option<bool>,
}

impl Record {
    fn new(kind: ComparisonKind, label: String, horizon: f64, s: f64, t: f64, estimate: f64, se: f64, oracle: f64) -> Self {
        let z = (se > 0.0).then(|| (estimate - oracle) / se);
        let ratio = (oracle != 0.0).then(|| estimate / oracle);
        Self { name: label, horizon, s, t, estimate, se, oracle, z, ratio, passed: kind.gate().passes(z) }
    }
}

/// Per-arm replica bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub init: InitSpec,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub half_width: f64,
    pub used: usize,
    pub aborted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub config_hash: String,
    pub seed: u64,
    pub replicas: usize,
    pub aborted: usize,
    pub arms: Vec<ArmSummary>,
    pub valid: bool,
    pub invalid_reason: Option<String>,
    /// Omitted in reproducible mode.
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub records: Vec<Record>,
    pub metadata: Metadata,
    pub config: ExperimentSpec,
}

impl Report {
    /// True when the report is valid and no gated comparison failed.
    pub fn passed(&self) -> bool {
        self.metadata.valid && self.records.iter().all(|r| r.passed != Some(false))
    }

    pub fn clear_timing(&mut self) {
        self.metadata.wall_time_s = None;
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Flat table `name,T,s,t,estimate,se,oracle,z`, preceded by a `#`
    /// metadata line unless `reproducible`.
    pub fn to_csv(&self, reproducible: bool) -> String {
        let mut out = String::new();
        if !reproducible {
            out.push_str(&format!(
                "# config_hash={} seed={} replicas={} aborted={} valid={} wall_time_s={}\n",
                self.metadata.config_hash,
                self.metadata.seed,
                self.metadata.replicas,
                self.metadata.aborted,
                self.metadata.valid,
                self.metadata.wall_time_s.map_or("NA".to_string(), |w| format!("{w:.3}")),
            ));
        }
        out.push_str("name,T,s,t,estimate,se,oracle,z\n");
        for r in &self.records {
            let z = r.z.map_or("NA".to_string(), |z| z.to_string());
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.name, r.horizon, r.s, r.t, r.estimate, r.se, r.oracle, z
            ));
        }
        out
    }
}

/// Random stream for one replica of one arm, independent of scheduling.
pub fn replica_rng(master_seed: u64, arm: u64, horizon_index: u64, replica: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream((arm << 56) | (horizon_index << 40) | replica);
    rng
}

/// Per-replica output for one horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaPaths {
    /// `X_T(t)` for every test function (outer) and output time (inner).
    pub paths: Vec<Vec<f64>>,
    /// `⟨N_{Tt}, φ⟩` at the output times.
    pub raw: Vec<Vec<f64>>,
    /// `⟨X̃_T, Φ⟩` per test function, from the dense path.
    pub pairings: Vec<f64>,
}

/// Simulates one replica and reduces it to paths and pairings.
pub fn simulate_replica(
    spec: &ExperimentSpec,
    sim: &SimConfig,
    horizon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ReplicaPaths> {
    let step = horizon * spec.dense_step;
    let grid = dense_grid(horizon, step)?;
    let norm = norming(horizon, spec.model.alpha, spec.model.dim)?;
    let mut state = initialize(sim, rng)?;
    let obs = evolve_and_observe(&mut state, sim, &spec.phis, &grid, rng)?;
    let n = grid.len() - 1;
    let fine: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    let mut paths = Vec::with_capacity(spec.phis.len());
    let mut raw = Vec::with_capacity(spec.phis.len());
    let mut pairings = Vec::with_capacity(spec.phis.len());
    for (j, phi) in spec.phis.iter().enumerate() {
        let column: Vec<f64> = obs.iter().map(|row| row[j]).collect();
        let full = occupation_fluctuation(&column, step, phi.mass(), horizon, &fine, norm)?;
        pairings.push(space_time_pairing(&full, &spec.weight));
        let idx: Vec<usize> = spec.out_grid.iter().map(|t| (t * n as f64).round() as usize).collect();
        paths.push(idx.iter().map(|&i| full.values[i]).collect());
        raw.push(idx.iter().map(|&i| column[i]).collect());
    }
    Ok(ReplicaPaths { paths, raw, pairings })
}

struct ArmResult {
    horizon: f64,
    runs: Vec<ReplicaPaths>,
    indices: Vec<usize>,
    summary: ArmSummary,
}

fn run_arm(spec: &ExperimentSpec, init: InitSpec, arm: u64, hi: usize, horizon: f64) -> Result<ArmResult> {
    let sim = spec.sim_config(init, horizon)?;
    let outcomes: Vec<Result<ReplicaPaths>> = (0..spec.replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(spec.master_seed, arm, hi as u64, r as u64);
            simulate_replica(spec, &sim, horizon, &mut rng)
        })
        .collect();
    let mut runs = Vec::with_capacity(outcomes.len());
    let mut indices = Vec::with_capacity(outcomes.len());
    let mut aborted = 0;
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(p) => {
                runs.push(p);
                indices.push(i);
            }
            Err(Error::Explosion { .. }) => aborted += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(ArmResult {
        horizon,
        summary: ArmSummary { init, horizon, half_width: sim.window.half_width, used: runs.len(), aborted },
        runs,
        indices,
    })
}

fn label(kind: ComparisonKind, a: usize, b: usize, n_phis: usize) -> String {
    if n_phis == 1 {
        kind.name().to_string()
    } else if a == b {
        format!("{}[{a}]", kind.name())
    } else {
        format!("{}[{a}:{b}]", kind.name())
    }
}

fn column_cov(runs: &[ReplicaPaths], f: impl Fn(&ReplicaPaths) -> f64, g: impl Fn(&ReplicaPaths) -> f64) -> CovEstimate {
    let x: Vec<f64> = runs.iter().map(&f).collect();
    let y: Vec<f64> = runs.iter().map(&g).collect();
    cov_of(&x, &y)
}

/// Runs every replica and comparison of `spec` on `workers` threads.
///
/// Each replica draws from its own stream derived from
/// `(master_seed, arm, horizon index, replica index)` and results are reduced
/// in replica order, so the report does not depend on `workers`.
pub fn run_experiment(spec: &ExperimentSpec, workers: usize) -> Result<Report> {
    spec.validate()?;
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| run_inner(spec)).map(|mut report| {
        report.metadata.wall_time_s = Some(started.elapsed().as_secs_f64());
        report
    })
}

fn run_inner(spec: &ExperimentSpec) -> Result<Report> {
    let stable = spec.model.stable();
    let params = spec.model.limit_params()?;
    let m = spec.model.law.second_factorial_moment();
    let mode = spec.init.mode();
    let n_phis = spec.phis.len();
    let kinds = &spec.comparisons;
    let wants = |k: ComparisonKind| kinds.contains(&k);
    let needs_main = kinds.iter().any(|k| *k != ComparisonKind::VVsN);
    let mut records = Vec::new();
    let mut arms = Vec::new();

    for (hi, &horizon) in spec.horizons.iter().enumerate() {
        if !needs_main {
            break;
        }
        let main = run_arm(spec, spec.init, spec.init as u64, hi, horizon)?;
        let runs = &main.runs;
        arms.push(main.summary.clone());
        if runs.len() < 2 {
            continue;
        }
        let times: Vec<f64> = spec.out_grid.clone();

        if wants(ComparisonKind::PoissonCov) {
            let kind = ComparisonKind::PoissonCov;
            for a in 0..n_phis {
                for b in a..n_phis {
                    for i in 0..times.len() {
                        for j in i..times.len() {
                            let (u, v) = (horizon * times[i], horizon * times[j]);
                            let est = column_cov(runs, |r| r.raw[a][i], |r| r.raw[b][j]);
                            let oracle = poisson_system_covariance(
                                u, v, &spec.phis[a], &spec.phis[b], &stable, spec.model.branch_rate, m, &spec.quad,
                            )?;
                            records.push(Record::new(kind, label(kind, a, b, n_phis), horizon, u, v, est.estimate, est.se, oracle));
                        }
                    }
                }
            }
        }
        if wants(ComparisonKind::TheoremVariance) {
            let kind = ComparisonKind::TheoremVariance;
            for a in 0..n_phis {
                for (i, &t) in times.iter().enumerate() {
                    if t == 0.0 {
                        continue;
                    }
                    let est = column_cov(runs, |r| r.paths[a][i], |r| r.paths[a][i]);
                    let oracle = theorem_covariance(mode, t, t, &spec.phis[a], &spec.phis[a], &params);
                    records.push(Record::new(kind, label(kind, a, a, n_phis), horizon, t, t, est.estimate, est.se, oracle));
                }
            }
        }
        if wants(ComparisonKind::TheoremCrossCov) {
            let kind = ComparisonKind::TheoremCrossCov;
            for a in 0..n_phis {
                for b in a..n_phis {
                    for i in 0..times.len() {
                        for j in i..times.len() {
                            if times[i] == 0.0 || (a == b && i == j) {
                                continue;
                            }
                            let est = column_cov(runs, |r| r.paths[a][i], |r| r.paths[b][j]);
                            let oracle = theorem_covariance(mode, times[i], times[j], &spec.phis[a], &spec.phis[b], &params);
                            records.push(Record::new(kind, label(kind, a, b, n_phis), horizon, times[i], times[j], est.estimate, est.se, oracle));
                        }
                    }
                }
            }
        }
        if wants(ComparisonKind::SpaceTimeVar) {
            let kind = ComparisonKind::SpaceTimeVar;
            for a in 0..n_phis {
                let est = column_cov(runs, |r| r.pairings[a], |r| r.pairings[a]);
                let oracle = limit_pairing_variance(&spec.phis[a], &spec.weight, mode, &params, &spec.quad)?;
                records.push(Record::new(kind, label(kind, a, a, n_phis), horizon, 0.0, 1.0, est.estimate, est.se, oracle));
            }
        }
        if wants(ComparisonKind::EquilibriumRatio) {
            let kind = ComparisonKind::EquilibriumRatio;
            let other_init = match spec.init {
                InitSpec::Poisson => InitSpec::Equilibrium,
                InitSpec::Equilibrium => InitSpec::Poisson,
            };
            let other = run_arm(spec, other_init, other_init as u64, hi, horizon)?;
            arms.push(other.summary.clone());
            let (pois, equi) = match spec.init {
                InitSpec::Poisson => (runs, &other.runs),
                InitSpec::Equilibrium => (&other.runs, runs),
            };
            if pois.len() >= 2 && equi.len() >= 2 {
                for a in 0..n_phis {
                    for (i, &t) in times.iter().enumerate() {
                        if t == 0.0 {
                            continue;
                        }
                        let vp = column_cov(pois, |r| r.paths[a][i], |r| r.paths[a][i]);
                        let ve = column_cov(equi, |r| r.paths[a][i], |r| r.paths[a][i]);
                        let ratio = equilibrium_ratio((vp.estimate, vp.se), (ve.estimate, ve.se));
                        let oracle = equilibrium_ratio_oracle(t, params.h);
                        records.push(Record::new(kind, label(kind, a, a, n_phis), other.horizon, t, t, ratio.ratio, ratio.se, oracle));
                    }
                }
            }
        }
    }

    if wants(ComparisonKind::VVsN) {
        records.extend(run_v_check(spec)?);
    }

    let aborted: usize = arms.iter().map(|a| a.aborted).sum();
    let mut invalid_reason = None;
    for a in &arms {
        let total = (a.used + a.aborted) as f64;
        if total > 0.0 && a.aborted as f64 / total > MAX_ABORT_FRACTION {
            invalid_reason = Some(format!(
                "{} of {} replicas aborted at T = {} ({:?} start)",
                a.aborted, total, a.horizon, a.init
            ));
        }
    }
    Ok(Report {
        records,
        metadata: Metadata {
            config_hash: spec.config_hash(),
            seed: spec.master_seed,
            replicas: spec.replicas,
            aborted,
            arms,
            valid: invalid_reason.is_none(),
            invalid_reason,
            wall_time_s: None,
        },
        config: spec.clone(),
    })
}

/// Raw `X_T` paths of every replica and horizon (the `simulate` output).
#[derive(Debug, Clone, PartialEq)]
pub struct PathDump {
    pub out_grid: Vec<f64>,
    /// `(T, replica, paths)`; aborted replicas are absent.
    pub rows: Vec<(f64, usize, ReplicaPaths)>,
    pub aborted: usize,
}

impl PathDump {
    /// Long-format CSV `replica,T,phi,t,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("replica,T,phi,t,value\n");
        for (horizon, replica, p) in &self.rows {
            for (j, path) in p.paths.iter().enumerate() {
                for (t, x) in self.out_grid.iter().zip(path) {
                    out.push_str(&format!("{replica},{horizon},{j},{t},{x}\n"));
                }
            }
        }
        out
    }
}

/// Simulates the `init` arm of `spec` at every horizon and keeps the paths.
pub fn simulate_paths(spec: &ExperimentSpec, workers: usize) -> Result<PathDump> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut rows = Vec::new();
        let mut aborted = 0;
        for (hi, &horizon) in spec.horizons.iter().enumerate() {
            let arm = run_arm(spec, spec.init, spec.init as u64, hi, horizon)?;
            aborted += arm.summary.aborted;
            rows.extend(arm.indices.into_iter().zip(arm.runs).map(|(r, p)| (horizon, r, p)));
        }
        Ok(PathDump { out_grid: spec.out_grid.clone(), rows, aborted })
    })
}

/// `v <= n` over the grid of ancestor positions, times and horizons.
fn run_v_check(spec: &ExperimentSpec) -> Result<Vec<Record>> {
    let kind = ComparisonKind::VVsN;
    let vc = &spec.v_check;
    let phi = &spec.phis[0];
    let mut cells = Vec::new();
    for (hi, &horizon) in spec.horizons.iter().enumerate() {
        for &x in &vc.points {
            for &f in &vc.time_fractions {
                cells.push((hi, horizon, x, f));
            }
        }
    }
    let outcomes: Vec<Result<Record>> = cells
        .par_iter()
        .enumerate()
        .map(|(ci, &(_, horizon, x, f))| {
            let sim = spec.sim_config(InitSpec::Poisson, horizon)?;
            let mut point = vec![0.0; spec.model.dim];
            point[0] = x;
            let t = f * horizon;
            let q = AncestorQuery {
                x: point,
                r: horizon - t,
                t,
                horizon,
                phi: phi.clone(),
                weight: spec.weight.clone(),
            };
            let mut rng = replica_rng(spec.master_seed, 7, 0, ci as u64);
            let v = estimate_v(&q, &sim, vc.reps, vc.steps, &mut rng)?;
            let n = compute_n(&sim.stable, &q, &spec.quad)?;
            let mut rec = Record::new(kind, kind.name().to_string(), horizon, x, t, v.estimate, v.se, n);
            if v.se == 0.0 {
                rec.passed = Some(v.estimate <= n);
            }
            Ok(rec)
        })
        .collect();
    outcomes.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_columns_give_variance() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64).sin(), (i as f64).sin()]).collect();
        let c = empirical_cov(&rows, 0, 1).unwrap();
        let v = empirical_cov(&rows, 0, 0).unwrap();
        assert_eq!(c, v);
        let x: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let m = x.iter().sum::<f64>() / 50.0;
        let var = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 49.0;
        assert!((v.estimate - var).abs() < 1e-14);
        assert!(v.se > 0.0);
    }

    #[test]
    fn jackknife_matches_brute_force() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i as f64 * 0.7).cos(), (i as f64 * 1.3).sin() + 0.1 * i as f64])
            .collect();
        let c = empirical_cov(&rows, 0, 1).unwrap();
        let n = rows.len();
        let loo: Vec<f64> = (0..n)
            .map(|k| {
                let sub: Vec<Vec<f64>> =
                    rows.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, r)| r.clone()).collect();
                empirical_cov(&sub, 0, 1).unwrap().estimate
            })
            .collect();
        let mean = loo.iter().sum::<f64>() / n as f64;
        let se = ((n as f64 - 1.0) / n as f64 * loo.iter().map(|c| (c - mean).powi(2)).sum::<f64>()).sqrt();
        assert!((c.se - se).abs() < 1e-12 * se.max(1.0), "{} vs {se}", c.se);
    }

    #[test]
    fn degenerate_column_is_flagged() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![1.0, i as f64]).collect();
        let c = empirical_cov(&rows, 0, 1).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.se, 0.0);
        assert!(empirical_cov(&rows[..1], 0, 1).is_err());
    }

    #[test]
    fn ratio_trivial_cases() {
        let r = equilibrium_ratio((2.0, 0.1), (2.0, 0.1));
        assert_eq!(r.ratio, 1.0);
        assert!((r.se - (2.0f64).sqrt() * 0.05).abs() < 1e-15);
        let s = equilibrium_ratio((6.0, 0.3), (6.0, 0.3));
        assert_eq!(s.ratio, r.ratio);
        assert!(equilibrium_ratio((0.0, 0.0), (1.0, 0.1)).degenerate);
    }

    #[test]
    fn gates() {
        assert_eq!(ComparisonKind::PoissonCov.gate().passes(Some(-4.5)), Some(false));
        assert_eq!(ComparisonKind::PoissonCov.gate().passes(Some(3.9)), Some(true));
        assert_eq!(ComparisonKind::VVsN.gate().passes(Some(-10.0)), Some(true));
        assert_eq!(ComparisonKind::VVsN.gate().passes(Some(3.5)), Some(false));
        assert_eq!(ComparisonKind::TheoremVariance.gate().passes(Some(50.0)), None);
    }
}

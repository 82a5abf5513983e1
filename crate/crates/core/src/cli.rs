//! Command-line front end. Exit codes: 0 success, 1 statistical failure
//! (or an invalid report), 2 configuration error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{self, B3Config, GFactsConfig, SampleLimitConfig};
use crate::error::{Error, Result};
use crate::limit_oracle::{b3_identity_residual, LimitParams, LimitPathSampler, PathKind};
use crate::mc_stats::{run_experiment, simulate_paths, ComparisonKind, ExperimentSpec, Report};
use crate::offspring::{g_facts, LawSpec, OffspringLaw};

pub const EXIT_OK: i32 = 0;
pub const EXIT_STAT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "occfluct", version, about = "Occupation time fluctuations of branching stable systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of replicas (overrides the config).
    #[arg(long, global = true)]
    pub replicas: Option<usize>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    /// Output file; `.json` selects the structured report, anything else CSV.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Drop timing information so that output is byte-identical across runs.
    #[arg(long, global = true)]
    pub reproducible: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Property report for `G(v) = F(1-v) - 1 + v`.
    Gfacts {
        /// Builtin law to check (repeatable); defaults to all builtins plus fuzzed laws.
        #[arg(long)]
        law: Vec<String>,
    },
    /// Raw occupation fluctuation paths as CSV.
    Simulate,
    /// Poisson-start covariance against its finite-time oracle.
    CheckCov,
    /// Variance and cross-covariance ladder against the limit covariance.
    CheckLimit,
    /// `v <= n` verification.
    CheckVn,
    /// Fractional / sub-fractional Brownian motion paths.
    SampleLimit {
        #[arg(long, value_parser = parse_kind)]
        kind: Option<PathKind>,
        #[arg(long)]
        h: Option<f64>,
        /// Number of equally spaced points in (0, 1].
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Residual of the integration-by-parts identity.
    B3Identity {
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        dim: Option<usize>,
    },
}

fn parse_kind(s: &str) -> std::result::Result<PathKind, String> {
    match s {
        "fractional" => Ok(PathKind::Fractional),
        "subfractional" => Ok(PathKind::Subfractional),
        _ => Err(format!("unknown kind '{s}' (fractional | subfractional)")),
    }
}

fn parse_law(name: &str) -> Result<OffspringLaw> {
    let spec = match name {
        "binary" => LawSpec::Binary {},
        "geometric_critical" => LawSpec::GeometricCritical {},
        "poisson_unit" => LawSpec::PoissonUnit {},
        other => return Err(Error::Config(format!("unknown law '{other}'"))),
    };
    OffspringLaw::try_from(spec)
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(Error::Config(msg)) => {
            eprintln!("config error: {msg}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_STAT_FAIL
        }
    }
}

fn emit(common: &Common, text: &str) -> Result<()> {
    match &common.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Error::Config(format!("line 0: cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn wants_json(common: &Common) -> bool {
    common
        .out
        .as_deref()
        .and_then(Path::extension)
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn experiment(common: &Common, forced: Option<&[ComparisonKind]>) -> Result<ExperimentSpec> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("line 0: this subcommand needs --config".into()))?;
    let mut spec = config::load_experiment(path)?;
    if let Some(seed) = common.seed {
        spec.master_seed = seed;
    }
    if let Some(r) = common.replicas {
        spec.replicas = r;
    }
    if let Some(kinds) = forced {
        spec.comparisons = kinds.to_vec();
    }
    spec.validate().map_err(|e| Error::Config(format!("line 0: {e}")))?;
    Ok(spec)
}

fn finish_report(common: &Common, mut report: Report) -> Result<i32> {
    if common.reproducible {
        report.clear_timing();
    }
    let text = if wants_json(common) { report.to_json() } else { report.to_csv(common.reproducible) };
    emit(common, &text)?;
    if let Some(reason) = &report.metadata.invalid_reason {
        eprintln!("report invalid: {reason}");
    }
    let failed: Vec<_> = report.records.iter().filter(|r| r.passed == Some(false)).collect();
    for r in &failed {
        eprintln!("FAILED {} T={} s={} t={} z={:?}", r.name, r.horizon, r.s, r.t, r.z);
    }
    Ok(if report.passed() { EXIT_OK } else { EXIT_STAT_FAIL })
}

fn run(cli: &Cli) -> Result<i32> {
    let common = &cli.common;
    match &cli.command {
        Command::Gfacts { law } => run_gfacts(common, law),
        Command::Simulate => {
            let spec = experiment(common, None)?;
            let dump = simulate_paths(&spec, common.workers)?;
            if dump.aborted > 0 {
                eprintln!("{} replicas aborted by the explosion guard", dump.aborted);
            }
            emit(common, &dump.to_csv())?;
            Ok(EXIT_OK)
        }
        Command::CheckCov => {
            let spec = experiment(common, Some(&[ComparisonKind::PoissonCov]))?;
            finish_report(common, run_experiment(&spec, common.workers)?)
        }
        Command::CheckLimit => {
            let mut spec = experiment(common, None)?;
            spec.comparisons.retain(|k| !matches!(k, ComparisonKind::PoissonCov | ComparisonKind::VVsN));
            if spec.comparisons.is_empty() {
                spec.comparisons = vec![ComparisonKind::TheoremVariance, ComparisonKind::TheoremCrossCov];
            }
            finish_report(common, run_experiment(&spec, common.workers)?)
        }
        Command::CheckVn => {
            let spec = experiment(common, Some(&[ComparisonKind::VVsN]))?;
            finish_report(common, run_experiment(&spec, common.workers)?)
        }
        Command::SampleLimit { kind, h, grid, paths } => run_sample_limit(common, *kind, *h, *grid, *paths),
        Command::B3Identity { alpha, dim } => run_b3(common, *alpha, *dim),
    }
}

fn run_gfacts(common: &Common, laws: &[String]) -> Result<i32> {
    let mut cfg: GFactsConfig = match &common.config {
        Some(p) => config::load(p)?,
        None => GFactsConfig::default(),
    };
    if !laws.is_empty() {
        cfg.laws = laws.iter().map(|l| parse_law(l)).collect::<Result<_>>()?;
        cfg.fuzzed = 0;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let mut all = cfg.laws.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.fuzzed {
        all.push(OffspringLaw::random_critical(&mut rng, cfg.fuzz_max_k).map_err(|e| Error::Config(format!("line 0: {e}")))?);
    }
    let mut out = String::from("law,index,check,value,passed\n");
    let mut ok = true;
    for (i, law) in all.iter().enumerate() {
        let f = g_facts(law);
        ok &= f.passed();
        let mut row = |check: &str, value: String, passed: bool| {
            out.push_str(&format!("{},{i},{check},{value},{passed}\n", f.law));
        };
        row("M", f.m.to_string(), true);
        row("min_g", f.min_g.to_string(), f.nonnegative);
        row("g_at_0", law.g_eval(0.0)?.to_string(), f.zero_at_origin);
        row("slope_at_1e-6", f.slope_at_origin[2].to_string(), f.slope_at_origin[2] < 1e-5);
        for (v, r) in ["1e-1", "1e-2", "1e-3"].iter().zip(f.expansion_residuals) {
            row(&format!("expansion_residual_{v}"), r.to_string(), f.expansion_decreasing);
        }
        row("max_g_over_v2", f.max_ratio.to_string(), f.max_ratio.is_finite());
        row("nondecreasing", f.nondecreasing.to_string(), f.nondecreasing);
        if let Some(e) = f.binary_rel_error {
            row("binary_g_equals_half_v2_rel_err", e.to_string(), e <= 1e-12);
            for v in [1e-3, 0.1, 0.5, 1.0] {
                row(&format!("G({v})"), law.g_eval(v)?.to_string(), (law.g_eval(v)? - 0.5 * v * v).abs() <= 1e-12 * 0.5 * v * v);
            }
        }
    }
    emit(common, &out)?;
    Ok(if ok { EXIT_OK } else { EXIT_STAT_FAIL })
}

fn run_sample_limit(
    common: &Common,
    kind: Option<PathKind>,
    h: Option<f64>,
    grid: Option<usize>,
    paths: Option<usize>,
) -> Result<i32> {
    let mut cfg: SampleLimitConfig = match &common.config {
        Some(p) => config::load(p)?,
        None => SampleLimitConfig {
            kind: kind.ok_or_else(|| Error::Config("line 0: --kind is required without --config".into()))?,
            h: None,
            model: None,
            phi: None,
            grid: 64,
            paths: 1,
            seed: 0,
        },
    };
    if let Some(k) = kind {
        cfg.kind = k;
    }
    if h.is_some() {
        cfg.h = h;
    }
    if let Some(g) = grid {
        cfg.grid = g;
    }
    if let Some(p) = paths {
        cfg.paths = p;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let points: Vec<f64> = (1..=cfg.grid).map(|i| i as f64 / cfg.grid as f64).collect();
    let sampler = match &cfg.model {
        Some(m) => {
            let params = LimitParams::new(m.alpha, m.dim, m.branch_rate, m.law.second_factorial_moment())
                .map_err(|e| Error::Config(format!("line 0: {e}")))?;
            let mass = cfg.phi.clone().unwrap_or_else(|| crate::occupation::TestFunction::standard(m.dim)).mass();
            LimitPathSampler::new(cfg.kind, &points, &params, mass)
        }
        None => {
            let h = cfg.h.ok_or_else(|| Error::Config("line 0: need --h or a model block".into()))?;
            if !(h > 1.0 && h < 2.0) {
                return Err(Error::Config(format!("line 0: h must lie in (1, 2), got {h}")));
            }
            LimitPathSampler::with_scale(cfg.kind, &points, h, 1.0)
        }
    }
    .map_err(|e| match e {
        Error::Grid(m) => Error::Config(format!("line 0: {m}")),
        other => other,
    })?;
    if sampler.jitter_level() > 0 {
        eprintln!("covariance needed jitter level {}", sampler.jitter_level());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples: Vec<_> = (0..cfg.paths).map(|_| sampler.sample(&mut rng)).collect();
    let mut out = String::from("t");
    for p in 0..cfg.paths {
        out.push_str(&format!(",path{p}"));
    }
    out.push('\n');
    for (i, t) in points.iter().enumerate() {
        out.push_str(&t.to_string());
        for s in &samples {
            out.push_str(&format!(",{}", s.values[i]));
        }
        out.push('\n');
    }
    emit(common, &out)?;
    Ok(EXIT_OK)
}

fn run_b3(common: &Common, alpha: Option<f64>, dim: Option<usize>) -> Result<i32> {
    let mut cfg: B3Config = match &common.config {
        Some(p) => config::load(p)?,
        None => B3Config::default(),
    };
    match (alpha, dim) {
        (Some(a), Some(d)) => cfg.cases = vec![config::B3Case { alpha: a, dim: d, branch_rate: 1.0 }],
        (None, None) => {}
        _ => return Err(Error::Config("line 0: --alpha and --dim go together".into())),
    }
    let mut out = String::from("alpha,dim,weight,lhs,rhs,residual,relative,passed\n");
    let mut ok = true;
    for case in &cfg.cases {
        let params = LimitParams::new(case.alpha, case.dim, case.branch_rate, 1.0)
            .map_err(|e| Error::Config(format!("line 0: {e}")))?;
        for (wi, w) in cfg.weights.iter().enumerate() {
            let b = b3_identity_residual(w, &params, &cfg.quad)?;
            let scale = b.scale();
            let rel = if scale > 0.0 { b.residual.abs() / scale } else { 0.0 };
            let passed = rel <= cfg.tolerance;
            ok &= passed;
            out.push_str(&format!(
                "{},{},{wi},{},{},{},{},{passed}\n",
                case.alpha, case.dim, b.lhs, b.rhs, b.residual, rel
            ));
        }
    }
    emit(common, &out)?;
    Ok(if ok { EXIT_OK } else { EXIT_STAT_FAIL })
}

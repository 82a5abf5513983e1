//! Critical offspring laws: generating function `F`, the derived
//! `G(v) = F(1-v) - 1 + v`, the second factorial moment and sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of atoms accepted for a custom law.
pub const MAX_CUSTOM_ATOMS: usize = 64;

const MOMENT_TOL: f64 = 1e-12;

/// Config-level description of a law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LawSpec {
    // empty braces make serde reject extra keys next to the tag
    /// `p_0 = p_2 = 1/2`.
    Binary {},
    /// `p_k = 2^{-(k+1)}`.
    GeometricCritical {},
    /// `p_k = e^{-1}/k!`.
    PoissonUnit {},
    /// Finite support, given as `(k, p_k)` pairs.
    Custom { pmf: Vec<(u32, f64)> },
}

/// A validated critical law with finite second moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LawSpec", into = "LawSpec")]
pub struct OffspringLaw {
    spec: LawSpec,
    /// Custom laws only: atoms sorted by `k`, with cumulative probabilities.
    atoms: Vec<(u32, f64)>,
    cumulative: Vec<f64>,
    m: f64,
}

impl TryFrom<LawSpec> for OffspringLaw {
    type Error = Error;

    fn try_from(spec: LawSpec) -> Result<Self> {
        match spec {
            LawSpec::Binary {} => Ok(Self::binary()),
            LawSpec::GeometricCritical {} => Ok(Self::geometric_critical()),
            LawSpec::PoissonUnit {} => Ok(Self::poisson_unit()),
            LawSpec::Custom { pmf } => Self::custom(pmf),
        }
    }
}

impl From<OffspringLaw> for LawSpec {
    fn from(law: OffspringLaw) -> Self {
        law.spec
    }
}

impl OffspringLaw {
    pub fn binary() -> Self {
        Self::builtin(LawSpec::Binary {}, 1.0)
    }

    pub fn geometric_critical() -> Self {
        Self::builtin(LawSpec::GeometricCritical {}, 2.0)
    }

    pub fn poisson_unit() -> Self {
        Self::builtin(LawSpec::PoissonUnit {}, 1.0)
    }

    fn builtin(spec: LawSpec, m: f64) -> Self {
        Self { spec, atoms: Vec::new(), cumulative: Vec::new(), m }
    }

    /// Finite-support law from `(k, p_k)` pairs. Requires at most 64 distinct
    /// atoms, `Σ p_k = 1` and `Σ k p_k = 1` to within `1e-12`.
    pub fn custom(pmf: Vec<(u32, f64)>) -> Result<Self> {
        if pmf.is_empty() || pmf.len() > MAX_CUSTOM_ATOMS {
            return Err(Error::InvalidParameter(format!(
                "custom law needs 1..={MAX_CUSTOM_ATOMS} atoms, got {}",
                pmf.len()
            )));
        }
        let mut atoms = pmf.clone();
        atoms.sort_by_key(|a| a.0);
        for w in atoms.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::InvalidParameter(format!("duplicate atom k={}", w[0].0)));
            }
        }
        for &(k, p) in &atoms {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::InvalidParameter(format!("bad probability {p} at k={k}")));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        let mean: f64 = atoms.iter().map(|a| a.0 as f64 * a.1).sum();
        if (total - 1.0).abs() > MOMENT_TOL {
            return Err(Error::InvalidParameter(format!("probabilities sum to {total}, not 1")));
        }
        if (mean - 1.0).abs() > MOMENT_TOL {
            return Err(Error::InvalidParameter(format!("mean is {mean}; law must be critical")));
        }
        let m = atoms
            .iter()
            .map(|&(k, p)| k as f64 * (k as f64 - 1.0) * p)
            .sum();
        let mut acc = 0.0;
        let cumulative = atoms
            .iter()
            .map(|a| {
                acc += a.1;
                acc
            })
            .collect();
        Ok(Self { spec: LawSpec::Custom { pmf }, atoms, cumulative, m })
    }

    /// Random critical finite-support law with atoms in `0..=max_k`
    /// (`max_k >= 2`): a mixture of `δ_0`, `δ_1` and a random law on `2..=max_k`.
    pub fn random_critical<R: Rng + ?Sized>(rng: &mut R, max_k: u32) -> Result<Self> {
        if max_k < 2 || max_k as usize > MAX_CUSTOM_ATOMS - 1 {
            return Err(Error::InvalidParameter(format!("max_k must lie in 2..=63, got {max_k}")));
        }
        let upper: Vec<(u32, f64)> = (2..=max_k)
            .filter_map(|k| {
                let keep = k == max_k || rng.random_bool(0.5);
                keep.then(|| (k, rng.random_range(0.05..1.0)))
            })
            .collect();
        let mass: f64 = upper.iter().map(|a| a.1).sum();
        let upper_mean: f64 = upper.iter().map(|a| a.0 as f64 * a.1).sum::<f64>() / mass;
        let p1 = if rng.random_bool(0.5) { rng.random_range(0.0..0.9) } else { 0.0 };
        let w = (1.0 - p1) / upper_mean;
        let mut pmf: Vec<(u32, f64)> = upper.iter().map(|&(k, q)| (k, w * q / mass)).collect();
        let p0 = 1.0 - w - p1;
        pmf.push((0, p0));
        if p1 > 0.0 {
            pmf.push((1, p1));
        }
        Self::custom(pmf)
    }

    pub fn spec(&self) -> &LawSpec {
        &self.spec
    }

    pub fn name(&self) -> &'static str {
        match self.spec {
            LawSpec::Binary {} => "binary",
            LawSpec::GeometricCritical {} => "geometric_critical",
            LawSpec::PoissonUnit {} => "poisson_unit",
            LawSpec::Custom { .. } => "custom",
        }
    }

    /// `p_k`.
    pub fn probability(&self, k: u32) -> f64 {
        match self.spec {
            LawSpec::Binary {} => {
                if k == 0 || k == 2 {
                    0.5
                } else {
                    0.0
                }
            }
            LawSpec::GeometricCritical {} => 0.5f64.powi(k as i32 + 1),
            LawSpec::PoissonUnit {} => {
                let log_fact: f64 = (1..=k).map(|j| (j as f64).ln()).sum();
                (-1.0 - log_fact).exp()
            }
            LawSpec::Custom { .. } => self
                .atoms
                .iter()
                .find(|a| a.0 == k)
                .map_or(0.0, |a| a.1),
        }
    }

    /// `M = F''(1) = Σ k(k-1) p_k`.
    pub fn second_factorial_moment(&self) -> f64 {
        self.m
    }

    /// `F(s) = Σ p_k s^k` for `s ∈ [0, 1]`.
    pub fn pgf_eval(&self, s: f64) -> Result<f64> {
        check_unit(s, "s")?;
        Ok(match self.spec {
            LawSpec::Binary {} => 0.5 * (1.0 + s * s),
            LawSpec::GeometricCritical {} => 1.0 / (2.0 - s),
            LawSpec::PoissonUnit {} => (s - 1.0).exp(),
            LawSpec::Custom { .. } => self.atoms.iter().map(|&(k, p)| p * s.powi(k as i32)).sum(),
        })
    }

    /// `G(v) = F(1-v) - 1 + v`, evaluated without cancellation for small `v`.
    pub fn g_eval(&self, v: f64) -> Result<f64> {
        check_unit(v, "v")?;
        let v2 = v * v;
        Ok(match self.spec {
            LawSpec::Binary {} => 0.5 * v2,
            LawSpec::GeometricCritical {} => v2 / (1.0 + v),
            LawSpec::PoissonUnit {} => {
                // e^{-v} - 1 + v = v² Σ_{n>=0} (-v)^n / (n+2)!
                let mut term = 0.5;
                let mut sum = 0.0;
                for n in 0..30 {
                    sum += term;
                    term *= -v / (n as f64 + 3.0);
                }
                v2 * sum
            }
            LawSpec::Custom { .. } => {
                // (1-v)^k - 1 + kv = v² Σ_{j=0}^{k-2} (k-1-j)(1-v)^j
                let u = 1.0 - v;
                let inner: f64 = self
                    .atoms
                    .iter()
                    .filter(|a| a.0 >= 2)
                    .map(|&(k, p)| {
                        let mut acc = 0.0;
                        let mut pow = 1.0;
                        for j in 0..=(k - 2) {
                            acc += (k - 1 - j) as f64 * pow;
                            pow *= u;
                        }
                        p * acc
                    })
                    .sum();
                v2 * inner
            }
        })
    }

    /// Draws a number of offspring.
    pub fn sample_offspring<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self.spec {
            LawSpec::Binary {} => {
                if rng.random::<bool>() {
                    2
                } else {
                    0
                }
            }
            // failures before the first success of a fair coin
            LawSpec::GeometricCritical {} => loop {
                let bits: u64 = rng.random();
                if bits != 0 {
                    break bits.trailing_zeros();
                }
            },
            LawSpec::PoissonUnit {} => {
                let u: f64 = rng.random();
                let mut k = 0u32;
                let mut p = (-1.0f64).exp();
                let mut cdf = p;
                while u >= cdf && k < 170 {
                    k += 1;
                    p /= k as f64;
                    cdf += p;
                }
                k
            }
            LawSpec::Custom { .. } => {
                let u: f64 = rng.random::<f64>() * self.cumulative[self.cumulative.len() - 1];
                let idx = self.cumulative.partition_point(|&c| c <= u);
                self.atoms[idx.min(self.atoms.len() - 1)].0
            }
        }
    }
}

/// Outcome of the property suite for `G` on a `1e-3` grid of `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GFacts {
    pub law: String,
    pub m: f64,
    /// `min G` over the grid.
    pub min_g: f64,
    pub nonnegative: bool,
    pub zero_at_origin: bool,
    /// `G(v)/v` at `v = 1e-2, 1e-4, 1e-6`.
    pub slope_at_origin: [f64; 3],
    /// `|G(v) - (M/2) v²| / v²` at `v = 1e-1, 1e-2, 1e-3`.
    pub expansion_residuals: [f64; 3],
    /// Residuals non-increasing up to `1e-12`.
    pub expansion_decreasing: bool,
    /// `max G(v)/v²` over the grid (excluding 0).
    pub max_ratio: f64,
    pub nondecreasing: bool,
    /// Binary law only: `max |G(v) - v²/2| / (v²/2)` over the grid.
    pub binary_rel_error: Option<f64>,
}

impl GFacts {
    pub fn passed(&self) -> bool {
        self.nonnegative
            && self.zero_at_origin
            && self.expansion_decreasing
            && self.nondecreasing
            && self.max_ratio.is_finite()
            && self.binary_rel_error.is_none_or(|e| e <= 1e-12)
    }
}

/// Checks the basic facts on `G`: non-negativity, `G(0) = 0`, `G'(0) = 0`,
/// comparability with `v²`, the expansion `G(v) ≈ (M/2) v²` and monotonicity.
pub fn g_facts(law: &OffspringLaw) -> GFacts {
    let g = |v: f64| law.g_eval(v).expect("grid lies in [0, 1]");
    let grid: Vec<f64> = (0..=1000).map(|i| i as f64 / 1000.0).collect();
    let values: Vec<f64> = grid.iter().map(|&v| g(v)).collect();
    let min_g = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max_ratio = grid[1..]
        .iter()
        .zip(&values[1..])
        .map(|(v, gv)| gv / (v * v))
        .fold(0.0, f64::max);
    let nondecreasing = values.windows(2).all(|w| w[1] >= w[0]);
    let half_m = 0.5 * law.second_factorial_moment();
    let residual = |v: f64| (g(v) - half_m * v * v).abs() / (v * v);
    let expansion_residuals = [residual(1e-1), residual(1e-2), residual(1e-3)];
    let expansion_decreasing = expansion_residuals.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    let binary_rel_error = matches!(law.spec, LawSpec::Binary {}).then(|| {
        grid[1..]
            .iter()
            .zip(&values[1..])
            .map(|(v, gv)| (gv - 0.5 * v * v).abs() / (0.5 * v * v))
            .fold(0.0, f64::max)
    });
    GFacts {
        law: law.name().to_string(),
        m: law.second_factorial_moment(),
        min_g,
        nonnegative: min_g >= 0.0,
        zero_at_origin: g(0.0) == 0.0,
        slope_at_origin: [g(1e-2) / 1e-2, g(1e-4) / 1e-4, g(1e-6) / 1e-6],
        expansion_residuals,
        expansion_decreasing,
        max_ratio,
        nondecreasing,
        binary_rel_error,
    }
}

fn check_unit(x: f64, name: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {x}")));
    }
    Ok(())
}

//! Closed-form constants and covariance kernels of the Gaussian limits,
//! finite-time covariance of the Poisson-started system, and Cholesky
//! samplers for fractional / sub-fractional Brownian motion.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occupation::{TestFunction, TimeWeight};
use crate::quadrature::{try_integrate, try_integrate_pieces, QuadConfig};
use crate::special::gamma;
use crate::stable_motion::{semigroup_pairing, StableParams};

/// Largest grid accepted by the Cholesky path sampler.
pub const MAX_PATH_GRID: usize = 2048;

/// Number of jitter escalations tried after a failed factorization.
pub const JITTER_RETRIES: usize = 3;

/// Which limit: Poisson start (sub-fractional) or equilibrium start (fractional).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Poisson,
    Equilibrium,
}

/// Gaussian path family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    Fractional,
    Subfractional,
}

impl From<Mode> for PathKind {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Poisson => PathKind::Subfractional,
            Mode::Equilibrium => PathKind::Fractional,
        }
    }
}

/// `h = 3 - d/α`, in `(1, 2)` when `α < d < 2α`.
pub fn hurst(alpha: f64, dim: usize) -> Result<f64> {
    let d = dim as f64;
    if !(alpha > 0.0 && alpha <= 2.0 && alpha < d && d < 2.0 * alpha) {
        return Err(Error::OutsideIntermediateRegime { alpha, dim });
    }
    Ok(3.0 - d / alpha)
}

/// Model constants entering every limit covariance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitParams {
    pub alpha: f64,
    pub dim: usize,
    pub branch_rate: f64,
    /// Second factorial moment of the offspring law.
    pub m: f64,
    pub h: f64,
    pub k: f64,
}

impl LimitParams {
    pub fn new(alpha: f64, dim: usize, branch_rate: f64, m: f64) -> Result<Self> {
        let h = hurst(alpha, dim)?;
        if !(branch_rate > 0.0 && branch_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("branching rate must be positive, got {branch_rate}")));
        }
        if !(m >= 0.0 && m.is_finite()) {
            return Err(Error::InvalidParameter(format!("second factorial moment must be finite, got {m}")));
        }
        let mut p = Self { alpha, dim, branch_rate, m, h, k: 0.0 };
        p.k = k_constant(&p);
        Ok(p)
    }

    pub fn stable(&self) -> StableParams {
        StableParams { alpha: self.alpha, dim: self.dim }
    }

    /// Kernel of the chosen limit.
    pub fn kernel(&self, mode: Mode, s: f64, t: f64) -> f64 {
        match mode {
            Mode::Poisson => subfrac_cov(s, t, self.h),
            Mode::Equilibrium => frac_cov(s, t, self.h),
        }
    }
}

/// `K = V Γ(2-h) / (2^{d-1} π^{d/2} α Γ(d/2) h (h-1))`.
pub fn k_constant(p: &LimitParams) -> f64 {
    let d = p.dim as f64;
    let h = 3.0 - d / p.alpha;
    p.branch_rate * gamma(2.0 - h)
        / (2f64.powf(d - 1.0) * PI.powf(d / 2.0) * p.alpha * gamma(d / 2.0) * h * (h - 1.0))
}

/// Sub-fractional kernel `s^h + t^h - ((s+t)^h + |s-t|^h)/2`.
pub fn subfrac_cov(s: f64, t: f64, h: f64) -> f64 {
    s.powf(h) + t.powf(h) - 0.5 * ((s + t).powf(h) + (s - t).abs().powf(h))
}

/// Fractional kernel `(s^h + t^h - |s-t|^h)/2`.
pub fn frac_cov(s: f64, t: f64, h: f64) -> f64 {
    0.5 * (s.powf(h) + t.powf(h) - (s - t).abs().powf(h))
}

/// Limit covariance `K M ⟨λ,φ⟩⟨λ,ψ⟩ kernel(s, t)`.
pub fn theorem_covariance(
    mode: Mode,
    s: f64,
    t: f64,
    phi: &TestFunction,
    psi: &TestFunction,
    params: &LimitParams,
) -> f64 {
    params.k * params.m * phi.mass() * psi.mass() * params.kernel(mode, s, t)
}

/// Limit of `Var_eq / Var_poisson` at time `t`: `c_h(t,t) / C_h(t,t)`.
pub fn equilibrium_ratio_oracle(t: f64, h: f64) -> f64 {
    frac_cov(t, t, h) / subfrac_cov(t, t, h)
}

/// Finite-time covariance of `⟨N_u, φ⟩` and `⟨N_v, ψ⟩` for the unit Poisson
/// start: `⟨λ, φ T_{v-u} ψ⟩ + M V ∫_0^u ⟨λ, φ T_{u+v-2r} ψ⟩ dr` for `u <= v`
/// (arguments are swapped when `u > v`).
pub fn poisson_system_covariance(
    u: f64,
    v: f64,
    phi: &TestFunction,
    psi: &TestFunction,
    stable: &StableParams,
    branch_rate: f64,
    m: f64,
    quad: &QuadConfig,
) -> Result<f64> {
    if !(u >= 0.0 && v >= 0.0) {
        return Err(Error::InvalidParameter("times must be non-negative".into()));
    }
    let (u, v, phi, psi) = if u <= v { (u, v, phi, psi) } else { (v, u, psi, phi) };
    let inner = quad.tightened(0.1);
    let direct = semigroup_pairing(stable, phi, psi, v - u, &inner)?;
    if u == 0.0 || m * branch_rate == 0.0 {
        return Ok(direct);
    }
    let branching = try_integrate(
        |r| semigroup_pairing(stable, phi, psi, u + v - 2.0 * r, &inner),
        0.0,
        u,
        quad,
    )?;
    Ok(direct + m * branch_rate * branching.value)
}

/// Largest `|g|` on an 11 × 11 grid of the unit square.
fn magnitude<G: Fn(f64, f64) -> f64>(g: G) -> f64 {
    let mut m = 0.0f64;
    for i in 0..=10 {
        for j in 0..=10 {
            m = m.max(g(i as f64 / 10.0, j as f64 / 10.0).abs());
        }
    }
    m
}

/// Absolute tolerance tied to the integrand scale, so that regions where the
/// integrand is tiny (and dominated by rounding) do not stall refinement.
fn absolute_floor(quad: &QuadConfig, scale: f64) -> QuadConfig {
    QuadConfig { abs_tol: quad.abs_tol.max(quad.rel_tol * 1e-3 * scale), ..*quad }
}

/// `∫_0^1 ∫_0^1 f(s, t) ψ(s) ψ(t) dt ds`, with the inner integral split at `t = s`.
fn double_weighted<F>(f: F, w: &TimeWeight, quad: &QuadConfig) -> Result<f64>
where
    F: Fn(f64, f64) -> f64,
{
    let scale = magnitude(|s, t| f(s, t) * w.psi(s) * w.psi(t));
    let quad = &absolute_floor(quad, scale);
    let inner = quad.tightened(0.01);
    let q = try_integrate(
        |s| {
            let pts: Vec<f64> = if s > 0.0 && s < 1.0 { vec![0.0, s, 1.0] } else { vec![0.0, 1.0] };
            let q = try_integrate_pieces(|t| Ok(f(s, t) * w.psi(t)), &pts, &inner)?;
            Ok(q.value * w.psi(s))
        },
        0.0,
        1.0,
        quad,
    )?;
    Ok(q.value)
}

/// Laplace exponent of the limit space-time pairing:
/// `(M K / 2) ⟨λ, φ⟩² ∫∫ kernel(s, t) ψ(s) ψ(t) ds dt`.
///
/// The limit pairing is centred Gaussian with variance twice this value.
pub fn limit_laplace_exponent(
    phi: &TestFunction,
    w: &TimeWeight,
    mode: Mode,
    params: &LimitParams,
    quad: &QuadConfig,
) -> Result<f64> {
    if w.is_zero() || phi.amplitude == 0.0 {
        return Ok(0.0);
    }
    let mass = phi.mass();
    let integral = double_weighted(|s, t| params.kernel(mode, s, t), w, quad)?;
    Ok(0.5 * params.m * params.k * mass * mass * integral)
}

/// Variance of the limit space-time pairing (twice the Laplace exponent).
pub fn limit_pairing_variance(
    phi: &TestFunction,
    w: &TimeWeight,
    mode: Mode,
    params: &LimitParams,
    quad: &QuadConfig,
) -> Result<f64> {
    Ok(2.0 * limit_laplace_exponent(phi, w, mode, params, quad)?)
}

/// Both sides of the integration-by-parts identity
/// `c₁ ∫∫ (u₁+u₂)^{h-2} χ(u₁) χ(u₂) = (K / 2V) ∫∫ ((u₁+u₂)^h - u₁^h - u₂^h) ψ(u₁) ψ(u₂)`
/// with `c₁ = Γ(d/α - 1) / (2^d α Γ(d/2) π^{d/2})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct B3Identity {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
}

impl B3Identity {
    pub fn scale(&self) -> f64 {
        self.lhs.abs().max(self.rhs.abs())
    }
}

pub fn b3_identity_residual(w: &TimeWeight, params: &LimitParams, quad: &QuadConfig) -> Result<B3Identity> {
    let d = params.dim as f64;
    let h = params.h;
    let c1 = gamma(d / params.alpha - 1.0)
        / (2f64.powf(d) * params.alpha * gamma(d / 2.0) * PI.powf(d / 2.0));
    let scale = magnitude(|a, b| (a + b).max(0.1).powf(h - 2.0) * w.chi(a) * w.chi(b));
    let quad = &absolute_floor(quad, scale);
    let inner = quad.tightened(0.01);
    // the inner integrand (u₁+u₂)^{h-2} is singular at the corner only
    let lhs_integral = try_integrate(
        |u1| {
            let q = try_integrate(|u2| Ok((u1 + u2).powf(h - 2.0) * w.chi(u2)), 0.0, 1.0, &inner)?;
            Ok(q.value * w.chi(u1))
        },
        0.0,
        1.0,
        quad,
    )?
    .value;
    let rhs_integral =
        double_weighted(|a, b| (a + b).powf(h) - a.powf(h) - b.powf(h), w, quad)?;
    let lhs = c1 * lhs_integral;
    let rhs = params.k / (2.0 * params.branch_rate) * rhs_integral;
    Ok(B3Identity { lhs, rhs, residual: lhs - rhs })
}

/// One sampled limit path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPathSample {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: PathKind,
}

/// Cholesky factor of `M K ⟨λ,φ⟩² kernel(s_i, s_j)` on a fixed grid.
#[derive(Debug, Clone)]
pub struct LimitPathSampler {
    kind: PathKind,
    grid: Vec<f64>,
    lower: DMatrix<f64>,
    jitter_level: usize,
}

impl LimitPathSampler {
    /// Factorizes the covariance; on failure adds `10^{k-1} · 1e-12 · trace / n`
    /// to the diagonal for `k = 1..=3` before giving up.
    pub fn new(kind: PathKind, grid: &[f64], params: &LimitParams, phi_mass: f64) -> Result<Self> {
        Self::with_scale(kind, grid, params.h, params.m * params.k * phi_mass * phi_mass)
    }

    /// Sampler for `scale^{1/2}` times the standard process of index `h`.
    pub fn with_scale(kind: PathKind, grid: &[f64], h: f64, scale: f64) -> Result<Self> {
        if !(h > 0.0 && h < 2.0) || !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("bad index {h} or scale {scale}")));
        }
        if grid.is_empty() || grid.len() > MAX_PATH_GRID {
            return Err(Error::Grid(format!(
                "path grid needs 1..={MAX_PATH_GRID} points, got {}",
                grid.len()
            )));
        }
        if grid[0] <= 0.0 || grid[grid.len() - 1] > 1.0 || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Grid("path grid must be strictly increasing in (0, 1]".into()));
        }
        let n = grid.len();
        let kernel = |s: f64, t: f64| match kind {
            PathKind::Fractional => frac_cov(s, t, h),
            PathKind::Subfractional => subfrac_cov(s, t, h),
        };
        let cov = DMatrix::from_fn(n, n, |i, j| scale * kernel(grid[i], grid[j]));
        let trace: f64 = cov.diagonal().iter().sum();
        for level in 0..=JITTER_RETRIES {
            let mut m = cov.clone();
            if level > 0 {
                let jitter = 1e-12 * trace / n as f64 * 10f64.powi(level as i32 - 1);
                for i in 0..n {
                    m[(i, i)] += jitter;
                }
            }
            if let Some(ch) = m.cholesky() {
                return Ok(Self { kind, grid: grid.to_vec(), lower: ch.l(), jitter_level: level });
            }
        }
        Err(Error::NotPositiveDefinite(JITTER_RETRIES + 1))
    }

    /// 0 when the covariance factorized without jitter.
    pub fn jitter_level(&self) -> usize {
        self.jitter_level
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> GaussianPathSample {
        let n = self.grid.len();
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let x = &self.lower * z;
        GaussianPathSample { grid: self.grid.clone(), values: x.iter().copied().collect(), kind: self.kind }
    }
}

/// One path of `(M K)^{1/2} ⟨λ,φ⟩` times fBm or sub-fBm of index `h`.
pub fn sample_limit_path<R: Rng + ?Sized>(
    kind: PathKind,
    grid: &[f64],
    params: &LimitParams,
    phi_mass: f64,
    rng: &mut R,
) -> Result<GaussianPathSample> {
    Ok(LimitPathSampler::new(kind, grid, params, phi_mass)?.sample(rng))
}

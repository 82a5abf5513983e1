//! Isotropic symmetric α-stable motion: exact increment sampling and the
//! semigroup `T_t` evaluated through its Fourier multiplier `exp(-t |z|^α)`.
//!
//! Fourier convention: `f̂(z) = ∫ f(x) e^{-i z·x} dx`, with `(2π)^{-d}` on the
//! inverse transform.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Open01, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occupation::TestFunction;
use crate::quadrature::{try_integrate, QuadConfig};
use crate::special::unit_sphere_area;

/// Largest dimension supported by the quadrature-based oracles.
pub const MAX_ORACLE_DIM: usize = 3;

/// `-ln` of the relative size of the neglected Gaussian tail in Fourier integrals.
const FOURIER_TAIL_LOG: f64 = 32.236; // ln(1e14)

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StableParams {
    pub alpha: f64,
    pub dim: usize,
}

impl StableParams {
    pub fn new(alpha: f64, dim: usize) -> Result<Self> {
        let p = Self { alpha, dim };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(Error::InvalidParameter(format!(
                "stability index must lie in (0, 2], got {}",
                self.alpha
            )));
        }
        if self.dim == 0 {
            return Err(Error::InvalidParameter("dimension must be >= 1".into()));
        }
        Ok(())
    }

    /// Constant `C` in the tail bound `P(|X_t| > r) <= C t r^{-α}` (zero for α = 2).
    ///
    /// This is the mass of the Lévy measure outside the unit ball,
    /// `2^α Γ((d+α)/2) / (Γ(d/2) Γ(1-α/2))`.
    pub fn tail_constant(&self) -> f64 {
        use crate::special::gamma;
        if self.alpha >= 2.0 {
            return 0.0;
        }
        let d = self.dim as f64;
        2f64.powf(self.alpha) * gamma((d + self.alpha) / 2.0)
            / (gamma(d / 2.0) * gamma(1.0 - self.alpha / 2.0))
    }
}

/// A spatial increment of the motion.
#[derive(Debug, Clone, PartialEq)]
pub struct Displacement {
    pub components: Vec<f64>,
}

impl Displacement {
    pub fn norm(&self) -> f64 {
        self.components.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// One-sided β-stable draw with `E exp(-u S) = exp(-u^β)` (Kanter's representation).
pub fn sample_positive_stable<R: Rng + ?Sized>(beta: f64, rng: &mut R) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "positive stable index must lie in (0, 1), got {beta}"
        )));
    }
    Ok(positive_stable(beta, rng))
}

#[inline]
pub(crate) fn positive_stable<R: Rng + ?Sized>(beta: f64, rng: &mut R) -> f64 {
    log_positive_stable(beta, rng).exp()
}

/// `ln S` for the one-sided β-stable law (Kanter), using three logarithms.
#[inline]
fn log_positive_stable<R: Rng + ?Sized>(beta: f64, rng: &mut R) -> f64 {
    let u01: f64 = Open01.sample(rng);
    let u = PI * u01;
    let e: f64 = Exp1.sample(rng);
    let one_minus = 1.0 - beta;
    let ln_a_over_e = (beta / one_minus) * (beta * u).sin().ln() + ((one_minus * u).sin() / e).ln()
        - u.sin().ln() / one_minus;
    (one_minus / beta) * ln_a_over_e
}

/// One-dimensional symmetric stable draw with characteristic function
/// `exp(-|z|^α)` by the Chambers–Mallows–Stuck formula.
pub fn sample_symmetric_stable_1d<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 2.0) {
        return Err(Error::InvalidParameter(format!(
            "stability index must lie in (0, 2], got {alpha}"
        )));
    }
    let u01: f64 = Open01.sample(rng);
    let v = PI * u01 - FRAC_PI_2;
    let w: f64 = Exp1.sample(rng);
    if (alpha - 1.0).abs() < 1e-12 {
        return Ok(v.tan());
    }
    Ok((alpha * v).sin() / v.cos().powf(1.0 / alpha)
        * (((1.0 - alpha) * v).cos() / w).powf((1.0 - alpha) / alpha))
}

/// Increment over `dt` with characteristic function `exp(-dt |z|^α)`.
///
/// For α < 2 this is `sqrt(2W) G` with `G` standard Gaussian and
/// `W = dt^{2/α} S`, `S` positive (α/2)-stable.
pub fn sample_stable_increment<R: Rng + ?Sized>(
    params: &StableParams,
    dt: f64,
    rng: &mut R,
) -> Result<Displacement> {
    params.validate()?;
    if !(dt >= 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "time step must be finite and non-negative, got {dt}"
        )));
    }
    let mut components = vec![0.0; params.dim];
    add_stable_increment(params, dt, rng, &mut components);
    Ok(Displacement { components })
}

/// Adds an increment over `dt` to `pos` in place (no validation).
#[inline]
pub(crate) fn add_stable_increment<R: Rng + ?Sized>(
    params: &StableParams,
    dt: f64,
    rng: &mut R,
    pos: &mut [f64],
) {
    if dt > 0.0 {
        add_stable_increment_log(params, dt.ln(), rng, pos);
    }
}

/// Same as [`add_stable_increment`] with `ln dt` supplied by the caller.
///
/// The Gaussian scale `sqrt(2 dt^{2/α} S)` is formed as a single exponential.
#[inline]
pub(crate) fn add_stable_increment_log<R: Rng + ?Sized>(
    params: &StableParams,
    log_dt: f64,
    rng: &mut R,
    pos: &mut [f64],
) {
    let log_var = if params.alpha >= 2.0 {
        std::f64::consts::LN_2 + log_dt
    } else {
        std::f64::consts::LN_2
            + (2.0 / params.alpha) * log_dt
            + log_positive_stable(params.alpha / 2.0, rng)
    };
    let scale = (0.5 * log_var).exp();
    for p in pos.iter_mut() {
        let g: f64 = StandardNormal.sample(rng);
        *p += scale * g;
    }
}

/// `φ̂(z) = A (2πσ²)^{d/2} exp(-σ²|z|²/2) exp(-i z·c)`.
pub fn fourier_of_test_function(phi: &TestFunction, z: &[f64]) -> Complex64 {
    let d = phi.dim() as f64;
    let s2 = phi.sigma * phi.sigma;
    let z2: f64 = z.iter().map(|v| v * v).sum();
    let zc: f64 = z.iter().zip(&phi.center).map(|(a, b)| a * b).sum();
    let modulus = phi.amplitude * (2.0 * PI * s2).powf(d / 2.0) * (-0.5 * s2 * z2).exp();
    Complex64::from_polar(modulus, -zc)
}

/// `∫_{R^d} f(|z|) cos(z₁ D) dz` for a rapidly decaying radial profile `f`
/// supported (numerically) on `|z| <= zmax`.
fn radial_fourier_integral<F>(
    f: F,
    dim: usize,
    offset: f64,
    zmax: f64,
    cfg: &QuadConfig,
) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if offset == 0.0 {
        let area = unit_sphere_area(dim);
        let q = try_integrate(|r| Ok(r.powi(dim as i32 - 1) * f(r)), 0.0, zmax, cfg)?;
        return Ok(area * q.value);
    }
    if dim == 1 {
        let q = try_integrate(|r| Ok(f(r) * (r * offset).cos()), 0.0, zmax, cfg)?;
        return Ok(2.0 * q.value);
    }
    // cylindrical reduction: z = (z₁, z⊥), |z⊥| = ρ
    let perp_area = unit_sphere_area(dim - 1);
    let inner_cfg = cfg.tightened(0.1);
    let q = try_integrate(
        |z1| {
            let rho_max = (zmax * zmax - z1 * z1).max(0.0).sqrt();
            let inner = try_integrate(
                |rho| Ok(rho.powi(dim as i32 - 2) * f((z1 * z1 + rho * rho).sqrt())),
                0.0,
                rho_max,
                &inner_cfg,
            )?;
            Ok(perp_area * inner.value * (z1 * offset).cos())
        },
        0.0,
        zmax,
        cfg,
    )?;
    Ok(2.0 * q.value)
}

fn check_oracle_dim(dim: usize) -> Result<()> {
    if dim > MAX_ORACLE_DIM {
        return Err(Error::InvalidParameter(format!(
            "quadrature oracles support d <= {MAX_ORACLE_DIM}, got {dim}"
        )));
    }
    Ok(())
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `⟨λ, φ T_s ψ⟩ = (2π)^{-d} ∫ φ̂(z) conj(ψ̂(z)) e^{-s|z|^α} dz`.
///
/// The integrand's imaginary part is odd in `z` and integrates to zero
/// exactly, so only the cosine part is computed. The Fourier integral is
/// truncated where the Gaussian factor drops below `1e-14` of its peak.
pub fn semigroup_pairing(
    params: &StableParams,
    phi: &TestFunction,
    psi: &TestFunction,
    s: f64,
    quad: &QuadConfig,
) -> Result<f64> {
    params.validate()?;
    check_oracle_dim(params.dim)?;
    if phi.dim() != params.dim || psi.dim() != params.dim {
        return Err(Error::InvalidParameter("test function dimension mismatch".into()));
    }
    if !(s >= 0.0) {
        return Err(Error::InvalidParameter(format!("negative time {s}")));
    }
    let d = params.dim;
    let spread = phi.sigma * phi.sigma + psi.sigma * psi.sigma;
    let prefactor = phi.amplitude * psi.amplitude * (phi.sigma * psi.sigma).powi(d as i32);
    if prefactor == 0.0 {
        return Ok(0.0);
    }
    let zmax = (2.0 * FOURIER_TAIL_LOG / spread).sqrt();
    let alpha = params.alpha;
    let profile = move |r: f64| (-0.5 * spread * r * r - s * r.powf(alpha)).exp();
    // magnitude bound for the absolute tolerance of oscillatory cases
    let bound = (2.0 * PI / spread).powf(d as f64 / 2.0);
    let cfg = QuadConfig {
        abs_tol: quad.abs_tol.max(quad.rel_tol * bound * 1e-3),
        ..*quad
    };
    let offset = distance(&phi.center, &psi.center);
    let integral = radial_fourier_integral(profile, d, offset, zmax, &cfg)?;
    Ok(prefactor * integral)
}

/// `T_s φ(x) = (2π)^{-d} ∫ e^{-s|z|^α} φ̂(z) e^{i z·x} dz`.
pub fn apply_semigroup_pointwise(
    params: &StableParams,
    phi: &TestFunction,
    s: f64,
    x: &[f64],
    quad: &QuadConfig,
) -> Result<f64> {
    params.validate()?;
    check_oracle_dim(params.dim)?;
    if phi.dim() != params.dim || x.len() != params.dim {
        return Err(Error::InvalidParameter("point dimension mismatch".into()));
    }
    if !(s >= 0.0) {
        return Err(Error::InvalidParameter(format!("negative time {s}")));
    }
    let d = params.dim;
    let s2 = phi.sigma * phi.sigma;
    let prefactor = phi.amplitude * (phi.sigma / (2.0 * PI).sqrt()).powi(d as i32);
    if prefactor == 0.0 {
        return Ok(0.0);
    }
    let zmax = (2.0 * FOURIER_TAIL_LOG / s2).sqrt();
    let alpha = params.alpha;
    let profile = move |r: f64| (-0.5 * s2 * r * r - s * r.powf(alpha)).exp();
    let bound = (2.0 * PI / s2).powf(d as f64 / 2.0);
    let cfg = QuadConfig {
        abs_tol: quad.abs_tol.max(quad.rel_tol * bound * 1e-3),
        ..*quad
    };
    let offset = distance(x, &phi.center);
    let integral = radial_fourier_integral(profile, d, offset, zmax, &cfg)?;
    Ok(prefactor * integral)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_gaussian(dim: usize) -> TestFunction {
        TestFunction::new(1.0, vec![0.0; dim], 1.0).unwrap()
    }

    #[test]
    fn rejects_bad_indices() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_positive_stable(0.0, &mut rng).is_err());
        assert!(sample_positive_stable(1.0, &mut rng).is_err());
        assert!(sample_positive_stable(1.5, &mut rng).is_err());
        assert!(StableParams::new(0.0, 1).is_err());
        assert!(StableParams::new(2.5, 1).is_err());
        assert!(StableParams::new(1.0, 0).is_err());
        let p = StableParams::new(1.0, 1).unwrap();
        assert!(sample_stable_increment(&p, -1.0, &mut rng).is_err());
    }

    #[test]
    fn positive_stable_is_deterministic_per_stream() {
        let mut a = ChaCha8Rng::seed_from_u64(99);
        let mut b = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..10 {
            let x = sample_positive_stable(0.9, &mut a).unwrap();
            let y = sample_positive_stable(0.9, &mut b).unwrap();
            assert_eq!(x, y);
            assert!(x > 0.0 && x.is_finite());
        }
    }

    #[test]
    fn zero_step_gives_zero_displacement() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = StableParams::new(0.75, 3).unwrap();
        let d = sample_stable_increment(&p, 0.0, &mut rng).unwrap();
        assert_eq!(d.components, vec![0.0; 3]);
    }

    #[test]
    fn gaussian_case_variance() {
        // α = 2, dt = 0.5: each coordinate has variance 2 dt = 1
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = StableParams::new(2.0, 1).unwrap();
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_stable_increment(&p, 0.5, &mut rng).unwrap().components[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // SE of a Gaussian sample variance: sqrt(2/(n-1)) σ²
        let se = (2.0 / (n - 1) as f64).sqrt();
        assert!((var - 1.0).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn fourier_transform_values() {
        let phi = unit_gaussian(1);
        let at_zero = fourier_of_test_function(&phi, &[0.0]);
        assert!((at_zero.re - phi.mass()).abs() < 1e-14);
        assert_eq!(at_zero.im, 0.0);
        let at_one = fourier_of_test_function(&phi, &[1.0]);
        let expected = (2.0 * PI).sqrt() * (-0.5f64).exp();
        assert!((at_one.re - expected).abs() < 1e-14);
        let shifted = TestFunction::new(1.0, vec![2.3], 1.0).unwrap();
        for z in [0.3, 1.0, 4.0] {
            let a = fourier_of_test_function(&phi, &[z]).norm();
            let b = fourier_of_test_function(&shifted, &[z]).norm();
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn pairing_at_time_zero_is_l2_product() {
        let p = StableParams::new(0.75, 1).unwrap();
        let phi = unit_gaussian(1);
        let v = semigroup_pairing(&p, &phi, &phi, 0.0, &QuadConfig::default()).unwrap();
        assert!((v - PI.sqrt()).abs() < 1e-8, "{v}");
    }

    #[test]
    fn pairing_far_apart_is_small_and_follows_the_jump_tail() {
        let p = StableParams::new(1.5, 1).unwrap();
        let phi = unit_gaussian(1);
        let psi = TestFunction::new(1.0, vec![40.0], 1.0).unwrap();
        let v = semigroup_pairing(&p, &phi, &psi, 1e-6, &QuadConfig::default()).unwrap();
        assert!(v.abs() < 1e-9, "{v}");
        // small s: ⟨φ, T_s ψ⟩ ≈ s m_φ m_ψ ν(D) with Lévy density
        // ν(x) = Γ(1+α) sin(πα/2) / π |x|^{-1-α}
        let s = 1e-3;
        let v = semigroup_pairing(&p, &phi, &psi, s, &QuadConfig::default()).unwrap();
        let nu = crate::special::gamma(2.5) * (0.75 * PI).sin() / PI * 40f64.powf(-2.5);
        let approx = s * phi.mass() * psi.mass() * nu;
        assert!((v / approx - 1.0).abs() < 0.02, "{v} vs {approx}");
    }

    #[test]
    fn pointwise_at_time_zero_is_identity() {
        let p = StableParams::new(1.2, 2).unwrap();
        let phi = TestFunction::new(2.0, vec![0.5, -0.25], 0.8).unwrap();
        for x in [[0.0, 0.0], [0.5, -0.25], [1.5, 1.0]] {
            let v = apply_semigroup_pointwise(&p, &phi, 0.0, &x, &QuadConfig::default()).unwrap();
            assert!((v - phi.eval(&x)).abs() < 1e-8, "{v} vs {}", phi.eval(&x));
        }
    }

    #[test]
    fn dimension_cap_enforced() {
        let p = StableParams::new(1.5, 4).unwrap();
        let phi = unit_gaussian(4);
        assert!(semigroup_pairing(&p, &phi, &phi, 1.0, &QuadConfig::default()).is_err());
    }

    #[test]
    fn tail_constant_one_dimensional() {
        // d = 1: 2 Γ(α) sin(πα/2) / π
        for alpha in [0.5, 0.75, 1.5] {
            let p = StableParams::new(alpha, 1).unwrap();
            let expected =
                2.0 * crate::special::gamma(alpha) * (PI * alpha / 2.0).sin() / PI;
            assert!((p.tail_constant() - expected).abs() < 1e-12);
        }
        assert_eq!(StableParams::new(2.0, 2).unwrap().tail_constant(), 0.0);
    }
}

//! Test functions, time weights, the rescaled occupation time fluctuation
//! `X_T(t) = F_T^{-1} (∫_0^{Tt} ⟨N_s, φ⟩ ds - Tt ⟨λ, φ⟩)`, its space-time
//! pairing, and the single-ancestor functionals `v` and `n`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::particle_system::{evolve_and_observe, Boundary, SimConfig, SystemState};
use libm::erf;

use crate::quadrature::{cumulative_trapezoid, trapezoid, try_integrate, QuadConfig};
use crate::stable_motion::{apply_semigroup_pointwise, StableParams};

/// `ln(1e6)`: test functions are treated as zero beyond `φ < 1e-6 A`.
const CUTOFF_LOG: f64 = 13.815_510_557_964_274;
// exp(-q) is below the smallest normal double past this point
const UNDERFLOW_EXPONENT: f64 = 708.0;

/// Isotropic Gaussian `φ(x) = A exp(-|x - c|² / (2σ²))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFunction {
    pub amplitude: f64,
    pub center: Vec<f64>,
    pub sigma: f64,
}

impl TestFunction {
    /// `amplitude = 0` is accepted and gives the zero function.
    pub fn new(amplitude: f64, center: Vec<f64>, sigma: f64) -> Result<Self> {
        let f = Self { amplitude, center, sigma };
        f.validate()?;
        Ok(f)
    }

    /// `A = 1`, `σ = 1`, centred at the origin.
    pub fn standard(dim: usize) -> Self {
        Self { amplitude: 1.0, center: vec![0.0; dim], sigma: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "amplitude must be finite and non-negative, got {}",
                self.amplitude
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("width must be positive, got {}", self.sigma)));
        }
        if self.center.is_empty() || self.center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("center must be a finite point".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `⟨λ, φ⟩ = A (2πσ²)^{d/2}`.
    pub fn mass(&self) -> f64 {
        self.amplitude * (2.0 * PI * self.sigma * self.sigma).powf(self.dim() as f64 / 2.0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { amplitude: self.amplitude * factor, ..self.clone() }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(&self.center).map(|(a, c)| (a - c) * (a - c)).sum();
        self.amplitude * (-0.5 * r2 / (self.sigma * self.sigma)).exp()
    }

    /// Value on the torus `[-L, L)^d` using minimum-image distances.
    #[inline]
    pub fn eval_periodic(&self, x: &[f64], half_width: f64) -> f64 {
        let period = 2.0 * half_width;
        let r2: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(a, c)| {
                let mut dx = a - c;
                dx -= period * (dx / period).round();
                dx * dx
            })
            .sum();
        let q = 0.5 * r2 / (self.sigma * self.sigma);
        if q > UNDERFLOW_EXPONENT {
            return 0.0;
        }
        self.amplitude * (-q).exp()
    }

    /// Distance from the origin beyond which `φ < 1e-6 A`.
    pub fn cutoff_radius(&self) -> f64 {
        let c: f64 = self.center.iter().map(|v| v * v).sum::<f64>().sqrt();
        c + self.sigma * (2.0 * CUTOFF_LOG).sqrt()
    }
}

/// Time weight `ψ >= 0` on `[0, 1]` and its tail integral `χ(t) = ∫_t^1 ψ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TimeWeightSpec", into = "TimeWeightSpec")]
pub struct TimeWeight {
    spec: TimeWeightSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeWeightSpec {
    /// `ψ(t) = Σ_k coeffs[k] t^k`.
    Polynomial { coeffs: Vec<f64> },
    /// `ψ(t) = height · exp(-(t - center)² / (2 width²))`.
    GaussianBump { center: f64, width: f64, #[serde(default = "one")] height: f64 },
}

fn one() -> f64 {
    1.0
}

impl TryFrom<TimeWeightSpec> for TimeWeight {
    type Error = Error;

    fn try_from(spec: TimeWeightSpec) -> Result<Self> {
        match &spec {
            TimeWeightSpec::Polynomial { coeffs } => {
                if coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidParameter("non-finite polynomial coefficient".into()));
                }
            }
            TimeWeightSpec::GaussianBump { center, width, height } => {
                if !(width > &0.0) || !center.is_finite() || !(height >= &0.0 && height.is_finite()) {
                    return Err(Error::InvalidParameter("bad Gaussian bump parameters".into()));
                }
            }
        }
        let w = Self { spec };
        // ψ >= 0 on a 1e-3 grid, allowing rounding noise
        for i in 0..=1000 {
            let t = i as f64 / 1000.0;
            if w.psi(t) < -1e-12 {
                return Err(Error::InvalidParameter(format!(
                    "time weight must be non-negative; psi({t}) = {}",
                    w.psi(t)
                )));
            }
        }
        Ok(w)
    }
}

impl From<TimeWeight> for TimeWeightSpec {
    fn from(w: TimeWeight) -> Self {
        w.spec
    }
}

impl TimeWeight {
    pub fn constant(value: f64) -> Result<Self> {
        Self::try_from(TimeWeightSpec::Polynomial { coeffs: vec![value] })
    }

    pub fn polynomial(coeffs: Vec<f64>) -> Result<Self> {
        Self::try_from(TimeWeightSpec::Polynomial { coeffs })
    }

    pub fn gaussian_bump(center: f64, width: f64) -> Result<Self> {
        Self::try_from(TimeWeightSpec::GaussianBump { center, width, height: 1.0 })
    }

    pub fn spec(&self) -> &TimeWeightSpec {
        &self.spec
    }

    pub fn is_zero(&self) -> bool {
        match &self.spec {
            TimeWeightSpec::Polynomial { coeffs } => coeffs.iter().all(|&c| c == 0.0),
            TimeWeightSpec::GaussianBump { height, .. } => *height == 0.0,
        }
    }

    /// `ψ(t)`.
    pub fn psi(&self, t: f64) -> f64 {
        match &self.spec {
            TimeWeightSpec::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c),
            TimeWeightSpec::GaussianBump { center, width, height } => {
                let z = (t - center) / width;
                height * (-0.5 * z * z).exp()
            }
        }
    }

    /// `χ(t) = ∫_t^1 ψ(s) ds`, taken as 0 for `t >= 1` and `χ(0)` for `t <= 0`.
    pub fn chi(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        if t == 1.0 {
            return 0.0;
        }
        match &self.spec {
            TimeWeightSpec::Polynomial { coeffs } => coeffs
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    let p = (k + 1) as f64;
                    c * (1.0 - t.powi(k as i32 + 1)) / p
                })
                .sum(),
            TimeWeightSpec::GaussianBump { center, width, height } => {
                let k = std::f64::consts::SQRT_2 * width;
                height * width * (PI / 2.0).sqrt() * (erf((1.0 - center) / k) - erf((t - center) / k))
            }
        }
    }
}

/// `F_T = T^{(3 - d/α)/2}`; requires `α < d < 2α`.
pub fn norming(horizon: f64, alpha: f64, dim: usize) -> Result<f64> {
    let d = dim as f64;
    if !(alpha < d && d < 2.0 * alpha) {
        return Err(Error::OutsideIntermediateRegime { alpha, dim });
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon must be positive, got {horizon}")));
    }
    Ok(horizon.powf((3.0 - d / alpha) / 2.0))
}

/// `X_T` for one test function on an output grid in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationPath {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub horizon: f64,
    pub norm: f64,
}

/// How the occupation integral is centred.
#[derive(Debug, Clone, PartialEq)]
pub enum Centering<'a> {
    /// Subtract `s ↦ ⟨λ, φ⟩` (exact mean under criticality).
    Analytic { mass: f64 },
    /// Subtract a supplied mean profile on the dense grid (diagnostics).
    Empirical { mean: &'a [f64] },
}

/// Dense grid `0, δ, 2δ, …, T` with `T/δ` rounded to the nearest integer.
pub fn dense_grid(horizon: f64, dense_step: f64) -> Result<Vec<f64>> {
    if !(dense_step > 0.0 && horizon > 0.0) {
        return Err(Error::Grid("dense step and horizon must be positive".into()));
    }
    let n = (horizon / dense_step).round();
    if (n * dense_step - horizon).abs() > 1e-9 * horizon {
        return Err(Error::Grid(format!(
            "horizon {horizon} is not a multiple of the dense step {dense_step}"
        )));
    }
    let n = n as usize;
    Ok((0..=n).map(|i| horizon * i as f64 / n as f64).collect())
}

fn align(out_grid: &[f64], horizon: f64, dense_step: f64, len: usize) -> Result<Vec<usize>> {
    out_grid
        .iter()
        .map(|&t| {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Grid(format!("output time {t} outside [0, 1]")));
            }
            let pos = horizon * t / dense_step;
            let idx = pos.round();
            if (pos - idx).abs() > 1e-9 * pos.max(1.0) {
                return Err(Error::Grid(format!(
                    "output time {t} (T t = {}) is not on the dense grid of step {dense_step}",
                    horizon * t
                )));
            }
            let idx = idx as usize;
            if idx >= len {
                return Err(Error::Grid(format!("observations end before T t = {}", horizon * t)));
            }
            Ok(idx)
        })
        .collect()
}

/// `X_T(t)` on `out_grid` from observations `⟨N_s, φ⟩` at `s = 0, δ, 2δ, …`,
/// with the time integral by the trapezoid rule and analytic centering.
pub fn occupation_fluctuation(
    obs: &[f64],
    dense_step: f64,
    phi_mass: f64,
    horizon: f64,
    out_grid: &[f64],
    norm: f64,
) -> Result<FluctuationPath> {
    occupation_fluctuation_centered(
        obs,
        dense_step,
        &Centering::Analytic { mass: phi_mass },
        horizon,
        out_grid,
        norm,
    )
}

pub fn occupation_fluctuation_centered(
    obs: &[f64],
    dense_step: f64,
    centering: &Centering<'_>,
    horizon: f64,
    out_grid: &[f64],
    norm: f64,
) -> Result<FluctuationPath> {
    if !(norm > 0.0) {
        return Err(Error::InvalidParameter("norming must be positive".into()));
    }
    let idx = align(out_grid, horizon, dense_step, obs.len())?;
    let xs: Vec<f64> = (0..obs.len()).map(|i| i as f64 * dense_step).collect();
    let centred: Vec<f64> = match centering {
        Centering::Analytic { mass } => obs.iter().map(|o| o - mass).collect(),
        Centering::Empirical { mean } => {
            if mean.len() < obs.len() {
                return Err(Error::Grid("mean profile shorter than the observations".into()));
            }
            obs.iter().zip(mean.iter()).map(|(o, m)| o - m).collect()
        }
    };
    let running = cumulative_trapezoid(&xs, &centred);
    Ok(FluctuationPath {
        grid: out_grid.to_vec(),
        values: idx.iter().map(|&i| running[i] / norm).collect(),
        horizon,
        norm,
    })
}

/// `∫_0^1 X_T(t) ψ(t) dt` by the trapezoid rule on the path grid; the point
/// `(0, 0)` is prepended when the grid does not start at 0.
pub fn space_time_pairing(path: &FluctuationPath, w: &TimeWeight) -> f64 {
    let mut ts = Vec::with_capacity(path.grid.len() + 1);
    let mut ys = Vec::with_capacity(path.grid.len() + 1);
    if path.grid.first().is_none_or(|&t| t > 0.0) {
        ts.push(0.0);
        ys.push(0.0);
    }
    for (&t, &x) in path.grid.iter().zip(&path.values) {
        ts.push(t);
        ys.push(x * w.psi(t));
    }
    trapezoid(&ts, &ys)
}

/// Query point and weight for the single-ancestor functionals.
#[derive(Debug, Clone, PartialEq)]
pub struct AncestorQuery {
    pub x: Vec<f64>,
    pub r: f64,
    pub t: f64,
    pub horizon: f64,
    pub phi: TestFunction,
    pub weight: TimeWeight,
}

impl AncestorQuery {
    fn validate(&self, stable: &StableParams) -> Result<f64> {
        if self.x.len() != stable.dim || self.phi.dim() != stable.dim {
            return Err(Error::InvalidParameter("dimension mismatch".into()));
        }
        if !(self.t >= 0.0 && self.r >= 0.0) {
            return Err(Error::InvalidParameter("r and t must be non-negative".into()));
        }
        if self.t > self.horizon * (1.0 + 1e-12) {
            return Err(Error::InvalidParameter("t must not exceed the horizon".into()));
        }
        norming(self.horizon, stable.alpha, stable.dim)
    }

    /// `Ψ_T(·, s)` factor in time: `χ(s/T) / F_T`.
    fn time_factor(&self, s: f64, norm: f64) -> f64 {
        self.weight.chi(s / self.horizon) / norm
    }
}

/// `n_T(x, r, t) = F_T^{-1} ∫_0^t [T_{t-s} φ](x) χ((r + t - s)/T) ds`.
pub fn compute_n(stable: &StableParams, q: &AncestorQuery, quad: &QuadConfig) -> Result<f64> {
    let norm = q.validate(stable)?;
    if q.t == 0.0 || q.phi.amplitude == 0.0 || q.weight.is_zero() {
        return Ok(0.0);
    }
    let inner = quad.tightened(0.1);
    let value = try_integrate(
        |u| {
            let tphi = apply_semigroup_pointwise(stable, &q.phi, u, &q.x, &inner)?;
            Ok(tphi * q.time_factor(q.r + u, norm))
        },
        0.0,
        q.t,
        quad,
    )?;
    Ok(value.value)
}

/// Monte Carlo estimate of `v = 1 - E exp(-∫_0^t ⟨N_s^x, Ψ_T(·, r + s)⟩ ds)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VEstimate {
    pub estimate: f64,
    pub se: f64,
    pub used: usize,
    pub aborted: usize,
}

/// Simulates `reps` systems started from one particle at `x` (open
/// boundary) with `steps` trapezoid panels on `[0, t]`.
pub fn estimate_v<R: Rng + ?Sized>(
    q: &AncestorQuery,
    config: &SimConfig,
    reps: usize,
    steps: usize,
    rng: &mut R,
) -> Result<VEstimate> {
    let norm = q.validate(&config.stable)?;
    if reps < 2 || steps == 0 {
        return Err(Error::InvalidParameter("need at least 2 replicas and 1 step".into()));
    }
    if q.t == 0.0 || q.phi.amplitude == 0.0 || q.weight.is_zero() {
        return Ok(VEstimate { estimate: 0.0, se: 0.0, used: reps, aborted: 0 });
    }
    let mut sim = config.clone();
    sim.window.boundary = Boundary::Open;
    let grid: Vec<f64> = (0..=steps).map(|i| q.t * i as f64 / steps as f64).collect();
    let weights: Vec<f64> = grid.iter().map(|&s| q.time_factor(q.r + s, norm)).collect();
    let phis = std::slice::from_ref(&q.phi);
    let mut samples = Vec::with_capacity(reps);
    let mut aborted = 0;
    for _ in 0..reps {
        let mut state = SystemState::empty(config.stable.dim, sim.window);
        state.push_fresh(&q.x, sim.branch_rate, rng)?;
        match evolve_and_observe(&mut state, &sim, phis, &grid, rng) {
            Ok(obs) => {
                let ys: Vec<f64> = obs.iter().zip(&weights).map(|(row, w)| row[0] * w).collect();
                let integral = trapezoid(&grid, &ys);
                samples.push(1.0 - (-integral).exp());
            }
            Err(Error::Explosion { .. }) => aborted += 1,
            Err(e) => return Err(e),
        }
    }
    let n = samples.len();
    if n < 2 {
        return Err(Error::InvalidParameter("too many aborted replicas".into()));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok(VEstimate { estimate: mean, se: (var / n as f64).sqrt(), used: n, aborted })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norming_values() {
        assert_eq!(norming(1.0, 0.75, 1).unwrap(), 1.0);
        let v = norming(16.0, 0.75, 1).unwrap();
        assert!((v - 16f64.powf(5.0 / 6.0)).abs() < 1e-12 * v);
        let v = norming(4.0, 1.8, 3).unwrap();
        assert!((v - 4f64.powf(2.0 / 3.0)).abs() < 1e-12 * v);
        assert!(norming(4.0, 1.5, 1).is_err());
        assert!(norming(4.0, 0.4, 1).is_err());
    }

    #[test]
    fn constant_observations_give_zero_path() {
        let phi = TestFunction::standard(1);
        let m = phi.mass();
        let obs = vec![m; 65];
        let path = occupation_fluctuation(&obs, 0.0625, m, 4.0, &[0.0, 0.5, 1.0], 2.0).unwrap();
        assert_eq!(path.values[0], 0.0);
        assert!(path.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn misaligned_grid_is_rejected() {
        let obs = vec![1.0; 9];
        assert!(occupation_fluctuation(&obs, 0.5, 1.0, 4.0, &[0.3], 1.0).is_err());
        assert!(occupation_fluctuation(&obs, 0.5, 1.0, 8.0, &[1.0], 1.0).is_err());
        assert!(dense_grid(1.0, 0.3).is_err());
    }

    #[test]
    fn pairing_trivial_cases() {
        let path = FluctuationPath {
            grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
            values: vec![2.5; 11],
            horizon: 1.0,
            norm: 1.0,
        };
        let one = TimeWeight::constant(1.0).unwrap();
        assert!((space_time_pairing(&path, &one) - 2.5).abs() < 1e-12);
        let zero = TimeWeight::constant(0.0).unwrap();
        assert_eq!(space_time_pairing(&path, &zero), 0.0);
    }

    #[test]
    fn chi_properties() {
        for w in [
            TimeWeight::constant(1.0).unwrap(),
            TimeWeight::polynomial(vec![0.5, 0.0, 3.0]).unwrap(),
            TimeWeight::gaussian_bump(0.5, 0.15).unwrap(),
        ] {
            assert_eq!(w.chi(1.0), 0.0);
            let mut prev = f64::INFINITY;
            for i in 0..=100 {
                let c = w.chi(i as f64 / 100.0);
                assert!(c <= prev + 1e-15);
                prev = c;
            }
        }
        let w = TimeWeight::polynomial(vec![0.5, 0.0, 3.0]).unwrap();
        // ∫_0^1 (0.5 + 3 t²) dt = 1.5
        assert!((w.chi(0.0) - 1.5).abs() < 1e-15);
        assert!(TimeWeight::polynomial(vec![1.0, -3.0]).is_err());
        let bump = TimeWeight::gaussian_bump(0.4, 0.2).unwrap();
        for t in [0.0, 0.3, 0.9] {
            let q = crate::quadrature::integrate(|s| bump.psi(s), t, 1.0, &QuadConfig::with_rel_tol(1e-13))
                .unwrap();
            assert!((bump.chi(t) - q.value).abs() < 1e-13, "{} {}", bump.chi(t), q.value);
        }
    }

    #[test]
    fn weight_serde_is_strict() {
        let w: TimeWeight = serde_json::from_str(r#"{"kind":"polynomial","coeffs":[1.0]}"#).unwrap();
        assert_eq!(w, TimeWeight::constant(1.0).unwrap());
        assert!(serde_json::from_str::<TimeWeight>(r#"{"kind":"polynomial","coeffs":[1.0],"x":1}"#).is_err());
        assert!(serde_json::from_str::<TimeWeight>(r#"{"kind":"polynomial","coeffs":[-1.0]}"#).is_err());
    }

    #[test]
    fn periodic_eval_uses_minimum_image() {
        let phi = TestFunction::new(1.0, vec![9.5], 1.0).unwrap();
        let near = phi.eval_periodic(&[-9.5], 10.0);
        assert!((near - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn n_vanishes_at_zero_time() {
        let stable = StableParams::new(0.75, 1).unwrap();
        let q = AncestorQuery {
            x: vec![0.0],
            r: 4.0,
            t: 0.0,
            horizon: 4.0,
            phi: TestFunction::standard(1),
            weight: TimeWeight::constant(1.0).unwrap(),
        };
        assert_eq!(compute_n(&stable, &q, &QuadConfig::default()).unwrap(), 0.0);
    }
}

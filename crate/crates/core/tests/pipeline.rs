//! End-to-end checks of the simulator against closed forms and quadrature.

use occfluct::config::parse_experiment;
use occfluct::error::Error;
use occfluct::limit_oracle::poisson_system_covariance;
use occfluct::mc_stats::{empirical_cov, replica_rng, run_experiment};
use occfluct::occupation::{compute_n, AncestorQuery, TestFunction, TimeWeight};
use occfluct::offspring::OffspringLaw;
use occfluct::particle_system::{
    advance, evolve_and_observe, init_equilibrium, init_poisson, Boundary, InitKind, SimConfig,
    SimulationWindow,
};
use occfluct::quadrature::{integrate, QuadConfig};
use occfluct::stable_motion::{
    apply_semigroup_pointwise, sample_positive_stable, semigroup_pairing, StableParams,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(alpha: f64, dim: usize, rate: f64, half_width: f64) -> SimConfig {
    SimConfig {
        stable: StableParams::new(alpha, dim).unwrap(),
        law: OffspringLaw::binary(),
        branch_rate: rate,
        init: InitKind::Poisson,
        window: SimulationWindow::new(half_width, 1e-3, Boundary::Periodic).unwrap(),
        event_cap: 10_000_000,
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// `T_s φ` for a Gaussian `φ` under the heat semigroup with generator `Δ`.
fn heat_pointwise(phi: &TestFunction, s: f64, x: &[f64]) -> f64 {
    let v = phi.sigma * phi.sigma + 2.0 * s;
    let r2: f64 = x.iter().zip(&phi.center).map(|(a, c)| (a - c) * (a - c)).sum();
    phi.amplitude * (phi.sigma * phi.sigma / v).powf(x.len() as f64 / 2.0) * (-r2 / (2.0 * v)).exp()
}

#[test]
fn poisson_start_count_is_poisson() {
    let cfg = config(0.75, 1, 1.0, 10.0);
    let counts: Vec<f64> = (0..4000)
        .map(|r| {
            let mut rng = replica_rng(1, 0, 0, r);
            init_poisson(&cfg, &mut rng).unwrap().len() as f64
        })
        .collect();
    let (m, se) = mean_and_se(&counts);
    assert!((m - 20.0).abs() < 4.0 * se, "mean {m}");
    let var = counts.iter().map(|c| (c - m) * (c - m)).sum::<f64>() / 3999.0;
    // Var of the sample variance of Poisson(20) ≈ (2 λ² + λ) / n
    assert!((var - 20.0).abs() < 4.0 * ((2.0 * 400.0 + 20.0) / 4000.0f64).sqrt(), "var {var}");
}

#[test]
fn critical_branching_preserves_the_mean_pairing() {
    let cfg = config(0.75, 1, 1.0, 15.0);
    let phi = TestFunction::standard(1);
    let grid = [0.0, 1.0, 3.0];
    let mut at: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for r in 0..3000 {
        let mut rng = replica_rng(2, 0, 0, r);
        let mut state = init_poisson(&cfg, &mut rng).unwrap();
        let obs = evolve_and_observe(&mut state, &cfg, std::slice::from_ref(&phi), &grid, &mut rng).unwrap();
        at[0].push(obs[1][0]);
        at[1].push(obs[2][0]);
    }
    for xs in &at {
        let (m, se) = mean_and_se(xs);
        assert!((m - phi.mass()).abs() < 4.0 * se, "mean {m} ± {se}");
    }
}

#[test]
fn slow_branching_reduces_to_the_semigroup() {
    // with V → 0 the covariance is ⟨λ, φ T_{v-u} φ⟩ only
    let cfg = config(1.5, 1, 1e-9, 20.0);
    let phi = TestFunction::standard(1);
    let stable = cfg.stable;
    let quad = QuadConfig::default();
    let oracle = poisson_system_covariance(0.5, 1.5, &phi, &phi, &stable, 1e-9, 1.0, &quad).unwrap();
    let plain = semigroup_pairing(&stable, &phi, &phi, 1.0, &quad).unwrap();
    assert!((oracle - plain).abs() < 1e-8);
    let grid = [0.0, 0.5, 1.5];
    let rows: Vec<Vec<f64>> = (0..8000)
        .map(|r| {
            let mut rng = replica_rng(3, 0, 0, r);
            let mut state = init_poisson(&cfg, &mut rng).unwrap();
            let obs = evolve_and_observe(&mut state, &cfg, std::slice::from_ref(&phi), &grid, &mut rng).unwrap();
            assert_eq!(state.events(), 0);
            vec![obs[1][0], obs[2][0]]
        })
        .collect();
    let c = empirical_cov(&rows, 0, 1).unwrap();
    assert!(((c.estimate - plain) / c.se).abs() < 4.0, "{c:?} vs {plain}");
}

#[test]
fn heat_semigroup_closed_forms() {
    let quad = QuadConfig::with_rel_tol(1e-10);
    for dim in 1..=3 {
        let heat = StableParams::new(2.0, dim).unwrap();
        let mut center = vec![0.0; dim];
        center[0] = 0.7;
        let phi = TestFunction::new(1.3, center, 0.8).unwrap();
        let psi = TestFunction::standard(dim);
        for s in [0.0, 0.3, 2.0] {
            let mut x = vec![0.2; dim];
            x[0] = -0.5;
            let got = apply_semigroup_pointwise(&heat, &phi, s, &x, &quad).unwrap();
            let exact = heat_pointwise(&phi, s, &x);
            assert!((got - exact).abs() < 1e-8 * exact.max(1e-6), "d={dim} s={s}: {got} vs {exact}");
            // ⟨φ, T_s ψ⟩ = mass(ψ) T_{s + σ_ψ²/2} φ(c_ψ)
            let pair = semigroup_pairing(&heat, &phi, &psi, s, &quad).unwrap();
            let exact = psi.mass() * heat_pointwise(&phi, s + 0.5, &psi.center);
            assert!((pair - exact).abs() < 1e-8 * exact, "d={dim} s={s}: {pair} vs {exact}");
        }
    }
}

#[test]
fn linear_majorant_against_direct_quadrature() {
    // n at α = 2, d = 3 with the heat kernel in closed form
    let heat = StableParams::new(2.0, 3).unwrap();
    let phi = TestFunction::standard(3);
    let q = AncestorQuery {
        x: vec![1.0, 0.0, 0.0],
        r: 2.0,
        t: 2.0,
        horizon: 4.0,
        phi: phi.clone(),
        weight: TimeWeight::polynomial(vec![1.0, 1.0]).unwrap(),
    };
    let quad = QuadConfig::with_rel_tol(1e-10);
    let got = compute_n(&heat, &q, &quad).unwrap();
    let norm = occfluct::occupation::norming(4.0, 2.0, 3).unwrap();
    let exact = integrate(
        |u| heat_pointwise(&phi, u, &q.x) * q.weight.chi((q.r + u) / q.horizon) / norm,
        0.0,
        q.t,
        &quad,
    )
    .unwrap()
    .value;
    assert!((got - exact).abs() < 1e-8 * exact, "{got} vs {exact}");
}

#[test]
fn positive_stable_laplace_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for beta in [0.375, 0.5, 0.75] {
        let draws: Vec<f64> = (0..100_000).map(|_| sample_positive_stable(beta, &mut rng).unwrap()).collect();
        for u in [0.5, 1.0, 2.0] {
            let vals: Vec<f64> = draws.iter().map(|s| (-u * s).exp()).collect();
            let (m, se) = mean_and_se(&vals);
            let exact = (-f64::powf(u, beta)).exp();
            assert!((m - exact).abs() < 4.0 * se, "beta={beta} u={u}: {m} vs {exact}");
        }
    }
}

#[test]
fn levy_median() {
    // Laplace transform exp(-sqrt(u)) is the Lévy law with scale 1/2; its median
    // is 1 / (4 erfc⁻¹(1/2)²)
    let erfcinv_half = 0.476_936_276_204_469_9;
    let exact = 1.0 / (4.0 * erfcinv_half * erfcinv_half);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let n = 200_000;
    let below = (0..n)
        .filter(|_| sample_positive_stable(0.5, &mut rng).unwrap() <= exact)
        .count() as f64
        / n as f64;
    assert!((below - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt(), "{below}");
    // the CDF of this law at x is erfc(1 / (2 sqrt(x)))
    let cdf = |x: f64| libm::erfc(0.5 / x.sqrt());
    assert!((cdf(exact) - 0.5).abs() < 1e-12);
}

#[test]
fn equilibrium_burn_in_preserves_intensity() {
    let mut cfg = config(2.0, 3, 1.0, 2.5);
    cfg.init = InitKind::Equilibrium { t_burn: 5.0 };
    let lo = [-2.5; 3];
    let hi = [2.5; 3];
    let mut counts = Vec::new();
    let mut inner = Vec::new();
    for r in 0..2000 {
        let mut rng = replica_rng(5, 1, 0, r);
        let state = init_equilibrium(&cfg, &mut rng).unwrap();
        assert!((state.clock - 0.0).abs() < 1e-12);
        counts.push(state.count_in_box(&lo, &hi) as f64);
        inner.push(state.count_in_box(&[-1.0; 3], &[1.0; 3]) as f64);
    }
    let (m, se) = mean_and_se(&counts);
    assert!((m - 125.0).abs() < 4.0 * se, "{m} ± {se}");
    let (m, se) = mean_and_se(&inner);
    assert!((m - 8.0).abs() < 4.0 * se, "{m} ± {se}");
    // clustering: branching makes the counts over-dispersed relative to Poisson
    let var = counts.iter().map(|c| (c - 125.0) * (c - 125.0)).sum::<f64>() / 1999.0;
    assert!(var > 1.5 * 125.0, "var {var}");
}

#[test]
fn stationarity_of_the_equilibrium_start() {
    // d = 3, α = 2 is outside the intermediate regime, where the equilibrium
    // exists and the system is stationary after burn-in
    let mut cfg = config(2.0, 3, 1.0, 5.0);
    cfg.init = InitKind::Equilibrium { t_burn: 10.0 };
    let phi = TestFunction::standard(3);
    let grid = [0.0, 2.0];
    let mut first = Vec::new();
    let mut last = Vec::new();
    for r in 0..600 {
        let mut rng = replica_rng(6, 1, 0, r);
        let mut state = init_equilibrium(&cfg, &mut rng).unwrap();
        let obs = evolve_and_observe(&mut state, &cfg, std::slice::from_ref(&phi), &grid, &mut rng).unwrap();
        first.push(obs[0][0]);
        last.push(obs[1][0]);
    }
    let (m0, s0) = mean_and_se(&first);
    let (m1, s1) = mean_and_se(&last);
    assert!((m0 - m1).abs() < 4.0 * (s0 * s0 + s1 * s1).sqrt());
    let v0 = first.iter().map(|x| (x - m0).powi(2)).sum::<f64>() / 599.0;
    let v1 = last.iter().map(|x| (x - m1).powi(2)).sum::<f64>() / 599.0;
    assert!((v0 / v1 - 1.0).abs() < 0.35, "{v0} vs {v1}");
    assert!((m0 - phi.mass()).abs() < 4.0 * s0);
}

#[test]
fn explosion_guard_aborts_cleanly() {
    let mut cfg = config(0.75, 1, 1.0, 50.0);
    cfg.event_cap = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut state = init_poisson(&cfg, &mut rng).unwrap();
    let err = advance(&mut state, &cfg, 5.0, &mut rng).unwrap_err();
    assert!(matches!(err, Error::Explosion { cap: 10, .. }), "{err}");
}

#[test]
fn report_is_invalid_when_most_replicas_abort() {
    let spec = parse_experiment(
        r#"{
          "model": {"alpha": 0.75, "dim": 1, "law": {"kind": "binary"}, "branch_rate": 1.0, "event_cap": 5},
          "window": {"half_width": 20.0},
          "horizons": [1.0],
          "out_grid": [1.0],
          "dense_step": 0.25,
          "replicas": 10,
          "comparisons": ["theorem_variance"]
        }"#,
    )
    .unwrap();
    let report = run_experiment(&spec, 1).unwrap();
    assert!(!report.metadata.valid);
    assert!(!report.passed());
    assert_eq!(report.metadata.aborted, 10);
}

#[test]
fn experiment_is_independent_of_worker_count() {
    let spec = parse_experiment(
        r#"{
          "model": {"alpha": 0.75, "dim": 1, "law": {"kind": "geometric_critical"}, "branch_rate": 1.0},
          "window": {"half_width": 15.0},
          "horizons": [1.0, 2.0],
          "out_grid": [0.5, 1.0],
          "dense_step": 0.125,
          "replicas": 64,
          "master_seed": 99,
          "comparisons": ["poisson_cov", "theorem_variance", "space_time_var", "equilibrium_ratio"]
        }"#,
    )
    .unwrap();
    let mut a = run_experiment(&spec, 1).unwrap();
    let mut b = run_experiment(&spec, 3).unwrap();
    a.clear_timing();
    b.clear_timing();
    assert_eq!(a.to_csv(true), b.to_csv(true));
    assert_eq!(a.to_json(), b.to_json());
}

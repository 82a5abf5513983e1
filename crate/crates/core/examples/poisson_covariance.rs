//! Finite-time covariance of `⟨N_u, φ⟩` under the Poisson start: quadrature
//! oracle against a small Monte Carlo run.

use occfluct::limit_oracle::poisson_system_covariance;
use occfluct::mc_stats::{empirical_cov, replica_rng};
use occfluct::occupation::TestFunction;
use occfluct::offspring::OffspringLaw;
use occfluct::particle_system::{evolve_and_observe, init_poisson, Boundary, InitKind, SimConfig, SimulationWindow};
use occfluct::quadrature::QuadConfig;
use occfluct::stable_motion::StableParams;

fn main() -> occfluct::Result<()> {
    let stable = StableParams::new(0.75, 1)?;
    let phi = TestFunction::standard(1);
    let config = SimConfig {
        stable,
        law: OffspringLaw::binary(),
        branch_rate: 1.0,
        init: InitKind::Poisson,
        window: SimulationWindow::new(20.0, 1e-3, Boundary::Periodic)?,
        event_cap: 10_000_000,
    };
    let grid = [0.0, 0.5, 1.0];
    let reps = 4000;
    let mut rows = Vec::with_capacity(reps);
    for r in 0..reps {
        let mut rng = replica_rng(11, 0, 0, r as u64);
        let mut state = init_poisson(&config, &mut rng)?;
        let obs = evolve_and_observe(&mut state, &config, std::slice::from_ref(&phi), &grid, &mut rng)?;
        rows.push(vec![obs[1][0], obs[2][0]]);
    }
    let quad = QuadConfig::default();
    for (i, j, u, v) in [(0, 0, 0.5, 0.5), (0, 1, 0.5, 1.0), (1, 1, 1.0, 1.0)] {
        let est = empirical_cov(&rows, i, j)?;
        let oracle = poisson_system_covariance(u, v, &phi, &phi, &stable, 1.0, 1.0, &quad)?;
        println!(
            "Cov({u}, {v}): MC {:.4} ± {:.4}, oracle {:.6}, z = {:.2}",
            est.estimate,
            est.se,
            oracle,
            (est.estimate - oracle) / est.se
        );
    }
    Ok(())
}

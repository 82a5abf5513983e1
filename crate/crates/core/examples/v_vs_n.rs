//! The nonlinear functional `v` from a single ancestor against its linear
//! majorant `n`.

use occfluct::occupation::{compute_n, estimate_v, AncestorQuery, TestFunction, TimeWeight};
use occfluct::offspring::OffspringLaw;
use occfluct::particle_system::{Boundary, InitKind, SimConfig, SimulationWindow};
use occfluct::quadrature::QuadConfig;
use occfluct::stable_motion::StableParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> occfluct::Result<()> {
    let stable = StableParams::new(0.75, 1)?;
    let config = SimConfig {
        stable,
        law: OffspringLaw::binary(),
        branch_rate: 1.0,
        init: InitKind::Poisson,
        window: SimulationWindow::new(1.0, 1e-3, Boundary::Open)?,
        event_cap: 1_000_000,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let horizon = 4.0;
    for x in [0.0, 1.0, 3.0] {
        for t in [2.0, 4.0] {
            let q = AncestorQuery {
                x: vec![x],
                r: horizon - t,
                t,
                horizon,
                phi: TestFunction::standard(1),
                weight: TimeWeight::constant(1.0)?,
            };
            let v = estimate_v(&q, &config, 500, 128, &mut rng)?;
            let n = compute_n(&stable, &q, &QuadConfig::default())?;
            println!("x={x} t={t}: v = {:.4} ± {:.4}, n = {n:.4}", v.estimate, v.se);
        }
    }
    Ok(())
}

//! Window sizes chosen by the truncation rule, and the particle count of a
//! Poisson start.

use occfluct::occupation::TestFunction;
use occfluct::offspring::OffspringLaw;
use occfluct::particle_system::{init_poisson, Boundary, InitKind, SimConfig, SimulationWindow};
use occfluct::stable_motion::StableParams;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> occfluct::Result<()> {
    let phis = [TestFunction::standard(1)];
    let stable = StableParams::new(0.75, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for horizon in [4.0, 16.0, 64.0] {
        for boundary in [Boundary::Periodic, Boundary::Open] {
            let window = SimulationWindow::for_horizon(&stable, &phis, horizon, 1e-3, boundary)?;
            print!("T={horizon:<3} {boundary:?}: L = {:.1}", window.half_width);
            if boundary == Boundary::Periodic {
                let config = SimConfig {
                    stable,
                    law: OffspringLaw::binary(),
                    branch_rate: 1.0,
                    init: InitKind::Poisson,
                    window,
                    event_cap: 10_000_000,
                };
                let state = init_poisson(&config, &mut rng)?;
                print!(", {} particles (mean {:.0})", state.len(), window.volume(1));
            }
            println!();
        }
    }
    Ok(())
}

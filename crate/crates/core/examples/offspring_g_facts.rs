//! Properties of `G(v) = F(1-v) - 1 + v` for the built-in and random critical laws.

use occfluct::offspring::{g_facts, OffspringLaw};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> occfluct::Result<()> {
    let mut laws = vec![
        OffspringLaw::binary(),
        OffspringLaw::geometric_critical(),
        OffspringLaw::poisson_unit(),
        OffspringLaw::custom(vec![(0, 0.25), (1, 0.5), (3, 0.0), (2, 0.25)])?,
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..3 {
        laws.push(OffspringLaw::random_critical(&mut rng, 12)?);
    }
    for law in &laws {
        let f = g_facts(law);
        println!(
            "{:<20} M={:.4} min G={:.2e} residuals=[{:.2e}, {:.2e}, {:.2e}] passed={}",
            f.law,
            f.m,
            f.min_g,
            f.expansion_residuals[0],
            f.expansion_residuals[1],
            f.expansion_residuals[2],
            f.passed()
        );
    }
    Ok(())
}

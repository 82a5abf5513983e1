//! Empirical characteristic function of stable increments against `exp(-dt |z|^α)`.

use occfluct::stable_motion::{sample_positive_stable, sample_stable_increment, StableParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> occfluct::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let reps = 100_000;
    for alpha in [0.75, 1.5, 2.0] {
        let params = StableParams::new(alpha, 1)?;
        for dt in [0.5, 1.0] {
            let xs: Vec<f64> = (0..reps)
                .map(|_| sample_stable_increment(&params, dt, &mut rng).map(|d| d.components[0]))
                .collect::<occfluct::Result<_>>()?;
            for z in [0.5, 1.0, 2.0] {
                let emp = xs.iter().map(|x| (z * x).cos()).sum::<f64>() / reps as f64;
                let exact = (-dt * f64::powf(z, alpha)).exp();
                println!("alpha={alpha} dt={dt} z={z}: empirical {emp:.4} exact {exact:.4}");
            }
        }
    }

    // one-sided (1/2)-stable with Laplace transform exp(-sqrt(u))
    let mut draws: Vec<f64> = (0..reps)
        .map(|_| sample_positive_stable(0.5, &mut rng))
        .collect::<occfluct::Result<_>>()?;
    draws.sort_by(f64::total_cmp);
    println!("positive 1/2-stable median {:.4} (exact 1.0991)", draws[reps / 2]);
    Ok(())
}

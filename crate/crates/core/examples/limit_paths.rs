//! Cholesky sampling of fractional and sub-fractional Brownian paths.

use occfluct::limit_oracle::{frac_cov, subfrac_cov, LimitPathSampler, PathKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> occfluct::Result<()> {
    let grid: Vec<f64> = (1..=8).map(|i| i as f64 / 8.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let paths = 10_000;
    for h in [1.1, 4.0 / 3.0, 5.0 / 3.0, 1.9] {
        for kind in [PathKind::Fractional, PathKind::Subfractional] {
            let sampler = LimitPathSampler::with_scale(kind, &grid, h, 1.0)?;
            let mut sum_sq = 0.0;
            for _ in 0..paths {
                let x = sampler.sample(&mut rng).values[7];
                sum_sq += x * x;
            }
            let exact = match kind {
                PathKind::Fractional => frac_cov(1.0, 1.0, h),
                PathKind::Subfractional => subfrac_cov(1.0, 1.0, h),
            };
            println!(
                "h={h:.3} {kind:?}: Var X(1) = {:.4} (exact {exact:.4}), jitter level {}",
                sum_sq / paths as f64,
                sampler.jitter_level()
            );
        }
    }
    Ok(())
}

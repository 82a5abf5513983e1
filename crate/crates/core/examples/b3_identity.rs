//! Integration-by-parts identity linking the constant `K` to the kernel algebra.

use occfluct::limit_oracle::{b3_identity_residual, LimitParams};
use occfluct::occupation::TimeWeight;
use occfluct::quadrature::QuadConfig;

fn main() -> occfluct::Result<()> {
    let quad = QuadConfig { rel_tol: 1e-11, max_panels: 20_000, ..QuadConfig::default() };
    let weights = [
        ("constant", TimeWeight::constant(1.0)?),
        ("bump", TimeWeight::gaussian_bump(0.5, 0.15)?),
    ];
    for (alpha, dim) in [(0.75, 1), (1.2, 2), (1.8, 3)] {
        let params = LimitParams::new(alpha, dim, 1.0, 1.0)?;
        for (name, w) in &weights {
            let b = b3_identity_residual(w, &params, &quad)?;
            println!(
                "d={dim} alpha={alpha} {name:<8} lhs {:.12} rhs {:.12} relative residual {:.1e}",
                b.lhs,
                b.rhs,
                b.residual.abs() / b.scale()
            );
        }
    }
    Ok(())
}

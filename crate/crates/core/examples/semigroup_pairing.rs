//! `⟨λ, φ T_s ψ⟩` by Fourier quadrature; at α = 2 it matches the Gaussian
//! convolution in closed form.

use occfluct::occupation::TestFunction;
use occfluct::quadrature::QuadConfig;
use occfluct::stable_motion::{apply_semigroup_pointwise, semigroup_pairing, StableParams};

fn main() -> occfluct::Result<()> {
    let quad = QuadConfig::default();
    let phi = TestFunction::new(1.0, vec![0.0], 1.0)?;
    let psi = TestFunction::new(2.0, vec![1.5], 0.5)?;
    let heat = StableParams::new(2.0, 1)?;
    for s in [0.0, 0.5, 2.0] {
        // φ * ψ * heat kernel of variance 2s is Gaussian with variance σ²+σ'²+2s
        let var = 1.0 + 0.25 + 2.0 * s;
        let exact = 2.0 * 0.5 * 2.0 * std::f64::consts::PI / (2.0 * std::f64::consts::PI * var).sqrt()
            * (-1.5f64 * 1.5 / (2.0 * var)).exp();
        let q = semigroup_pairing(&heat, &phi, &psi, s, &quad)?;
        println!("alpha=2 s={s}: quadrature {q:.12}, closed form {exact:.12}");
    }
    let stable = StableParams::new(0.75, 1)?;
    for s in [0.1, 1.0, 10.0] {
        let pair = semigroup_pairing(&stable, &phi, &phi, s, &quad)?;
        let point = apply_semigroup_pointwise(&stable, &phi, s, &[0.0], &quad)?;
        println!("alpha=0.75 s={s}: pairing {pair:.6}, T_s phi(0) {point:.6}");
    }
    Ok(())
}

//! Exact CHSH value for a single photon shared between two parties that each
//! mix their half with a unit coherent reference.

use std::f64::consts::{FRAC_PI_2, PI};

use fock_chsh::analytic::{chsh_s, s_scheme1, CorrelationQuad};
use fock_chsh::schemes::{run_scheme1_exact, Truncation};

fn main() -> fock_chsh::Result<()> {
    let (xi, eta) = (0.75 * PI, 0.0);
    let trunc = Truncation::for_magnitude(1.0);

    for dphi in [FRAC_PI_2, 0.0, PI, 1.5 * PI] {
        let e = |a: f64, b: f64| -> fock_chsh::Result<f64> {
            Ok(run_scheme1_exact(a, b, 0.0, dphi, trunc)?.correlation())
        };
        let q = CorrelationQuad::new(
            e(xi, eta)?,
            e(xi + FRAC_PI_2, eta)?,
            e(xi, eta + FRAC_PI_2)?,
            e(xi + FRAC_PI_2, eta + FRAC_PI_2)?,
        );
        println!(
            "Δφ = {dphi:.4}  E = {:+.4} {:+.4} {:+.4} {:+.4}  S = {:.10} (closed form {:.10})",
            q.ab,
            q.apb,
            q.abp,
            q.apbp,
            chsh_s(&q),
            s_scheme1(xi - eta, dphi)
        );
    }

    let r = run_scheme1_exact(xi, eta, 0.0, FRAC_PI_2, trunc)?;
    println!("acceptance {:.6}  conditional {:?}", r.acceptance, r.conditional);
    Ok(())
}

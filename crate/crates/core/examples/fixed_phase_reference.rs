//! Both references split from one coherent beam: the phase difference is
//! locked and every run violates the inequality.

use std::f64::consts::PI;

use fock_chsh::analytic::s_scheme2;
use fock_chsh::experiment::{phase_average_estimate, run_chsh_experiment, ExperimentConfig, Scheme};
use fock_chsh::schemes::{run_scheme2_exact, Truncation};

fn main() -> fock_chsh::Result<()> {
    let t = Truncation::for_magnitude(std::f64::consts::SQRT_2);
    for phi in [0.0, 1.234, 4.0] {
        let r = run_scheme2_exact(0.75 * PI, 0.0, phi, t)?;
        println!("φ = {phi:<6} E(ξ,η) = {:+.12}", r.correlation());
    }

    let cfg = ExperimentConfig {
        scheme: Scheme::Two,
        shots: 50_000,
        bins: 1,
        seed: 2,
        ..Default::default()
    };
    let (s, err) = phase_average_estimate(&run_chsh_experiment(&cfg)?)?;
    println!("Monte Carlo S = {s:.4} ± {err:.4}  (exact {:.4})", s_scheme2(0.75 * PI));
    Ok(())
}

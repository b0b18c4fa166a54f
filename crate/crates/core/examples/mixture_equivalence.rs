//! A phase-averaged coherent state and a Poisson mixture of number states
//! are the same density matrix, so every outcome statistic agrees.

use std::f64::consts::SQRT_2;

use fock_chsh::schemes::{run_scheme3_exact, ReferenceSpec, Scheme3Options};

fn main() -> fock_chsh::Result<()> {
    let opts = Scheme3Options::default();
    let pa = ReferenceSpec::phase_averaged(SQRT_2);
    let po = ReferenceSpec::poisson(SQRT_2);
    let a = run_scheme3_exact(2.0, 0.3, &pa, &pa, &opts)?;
    let b = run_scheme3_exact(2.0, 0.3, &po, &po, &opts)?;
    println!("acceptance {:.12} vs {:.12}", a.acceptance, b.acceptance);
    println!("patterns   {:?}\n           {:?}", a.conditional, b.conditional);

    let ja = a.joint_distribution()?;
    let jb = b.joint_distribution()?;
    let worst = ja
        .iter()
        .map(|(k, v)| (v - jb.get(k).copied().unwrap_or(0.0)).abs())
        .fold(0.0, f64::max);
    println!("{} joint outcomes, largest difference {worst:e}", ja.len());
    Ok(())
}

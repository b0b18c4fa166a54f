//! Closed-form S against the reference phase difference, as CSV on stdout.

use std::f64::consts::PI;

use fock_chsh::analytic::{s_scheme1, violation_window};

fn main() {
    let (lo, hi) = violation_window();
    eprintln!("S > 2 for Δφ in ({lo:.4}, {hi:.4})");
    println!("delta_phi,c,S_analytic");
    for k in 0..=64 {
        let d = 2.0 * PI * k as f64 / 64.0;
        println!("{d:.6},{:.6},{:.6}", (d + PI / 2.0).cos(), s_scheme1(0.75 * PI, d));
    }
}

//! Two photons meeting at a balanced splitter never leave by different ports.

use fock_chsh::fock::{BeamSplitter, ModeId, StateVector};

fn main() -> fock_chsh::Result<()> {
    let (a, b) = (ModeId(1), ModeId(2));
    let input = StateVector::fock(a, 1, 2)?.tensor(&StateVector::fock(b, 1, 2)?)?;
    let out = input.beam_splitter(a, b, BeamSplitter::balanced())?;

    for (ket, amp) in out.terms() {
        println!("{ket}  amplitude {amp:.6}  probability {:.6}", amp.norm_sqr());
    }
    println!("P(1,1) = {:e}", out.amplitude(&[1, 1]).norm_sqr());

    // Unbalanced splitters let coincidences through again.
    for t in [0.9, 0.8, 0.7071] {
        let s = input.beam_splitter(a, b, BeamSplitter::with_transmittivity(t)?)?;
        println!("t = {t:<6} P(1,1) = {:.6}", s.amplitude(&[1, 1]).norm_sqr());
    }
    Ok(())
}

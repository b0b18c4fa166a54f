//! Closed-form detection probabilities, correlations and CHSH values for the
//! single-photon / two-reference interferometer, plus the remainder-beam
//! phase readout.
//!
//! Angles are radians throughout and are never reduced inside the formulas.
//! `delta_phi` is always `φ_b − φ_a`, the phase of Bob's reference relative
//! to Alice's.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One party's choice of detection axis: `base` or `base + π/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSetting {
    pub base: f64,
    pub rotated: bool,
}

impl MeasurementSetting {
    pub fn new(base: f64, rotated: bool) -> Self {
        MeasurementSetting { base, rotated }
    }

    /// Effective axis angle, which is also the mixing angle of the party's
    /// variable splitter (reflectivity `sin(angle/2)`).
    pub fn angle(&self) -> f64 {
        if self.rotated {
            self.base + FRAC_PI_2
        } else {
            self.base
        }
    }
}

/// Phases of the two coherent references for one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSample {
    pub phi_a: f64,
    pub phi_b: f64,
}

impl PhaseSample {
    pub fn new(phi_a: f64, phi_b: f64) -> Self {
        PhaseSample { phi_a, phi_b }
    }

    /// `φ_b − φ_a` reduced to `[0, 2π)`.
    pub fn delta(&self) -> f64 {
        reduce_angle(self.phi_b - self.phi_a)
    }
}

pub fn reduce_angle(x: f64) -> f64 {
    let r = x.rem_euclid(2.0 * PI);
    if r >= 2.0 * PI {
        0.0
    } else {
        r
    }
}

/// Two-click detection patterns on paths 4, 5 (Alice) and 6, 7 (Bob).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pattern {
    P1010,
    P0101,
    P1001,
    P0110,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [Pattern::P1010, Pattern::P0101, Pattern::P1001, Pattern::P0110];

    /// Occupations of paths 4, 5, 6, 7.
    pub fn occupations(&self) -> [u16; 4] {
        match self {
            Pattern::P1010 => [1, 0, 1, 0],
            Pattern::P0101 => [0, 1, 0, 1],
            Pattern::P1001 => [1, 0, 0, 1],
            Pattern::P0110 => [0, 1, 1, 0],
        }
    }

    pub fn from_occupations(occ: &[u16]) -> Option<Pattern> {
        Pattern::ALL.into_iter().find(|p| p.occupations() == occ)
    }

    /// Alice's outcome: +1 for a click on path 4, −1 for path 5.
    pub fn alice_sign(&self) -> i8 {
        match self {
            Pattern::P1010 | Pattern::P1001 => 1,
            _ => -1,
        }
    }

    /// Bob's outcome: +1 for a click on path 6, −1 for path 7.
    pub fn bob_sign(&self) -> i8 {
        match self {
            Pattern::P1010 | Pattern::P0110 => 1,
            _ => -1,
        }
    }

    pub fn from_signs(alice: i8, bob: i8) -> Pattern {
        match (alice > 0, bob > 0) {
            (true, true) => Pattern::P1010,
            (false, false) => Pattern::P0101,
            (true, false) => Pattern::P1001,
            (false, true) => Pattern::P0110,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Pattern::P1010 => "1010",
            Pattern::P0101 => "0101",
            Pattern::P1001 => "1001",
            Pattern::P0110 => "0110",
        }
    }
}

/// Distribution over the four two-click patterns, conditional on one click per party.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternDistribution {
    pub p1010: f64,
    pub p0101: f64,
    pub p1001: f64,
    pub p0110: f64,
}

impl PatternDistribution {
    pub fn get(&self, p: Pattern) -> f64 {
        match p {
            Pattern::P1010 => self.p1010,
            Pattern::P0101 => self.p0101,
            Pattern::P1001 => self.p1001,
            Pattern::P0110 => self.p0110,
        }
    }

    pub fn from_fn(mut f: impl FnMut(Pattern) -> f64) -> Self {
        PatternDistribution {
            p1010: f(Pattern::P1010),
            p0101: f(Pattern::P0101),
            p1001: f(Pattern::P1001),
            p0110: f(Pattern::P0110),
        }
    }

    pub fn sum(&self) -> f64 {
        self.p1010 + self.p0101 + self.p1001 + self.p0110
    }

    /// `P(same) − P(different)`.
    pub fn correlation(&self) -> f64 {
        (self.p1010 + self.p0101) - (self.p1001 + self.p0110)
    }

    pub fn max_abs_diff(&self, other: &PatternDistribution) -> f64 {
        Pattern::ALL
            .iter()
            .map(|&p| (self.get(p) - other.get(p)).abs())
            .fold(0.0, f64::max)
    }
}

/// Correlations for the four setting pairs, in CHSH order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationQuad {
    /// E(ξ, η)
    pub ab: f64,
    /// E(ξ+π/2, η)
    pub apb: f64,
    /// E(ξ, η+π/2)
    pub abp: f64,
    /// E(ξ+π/2, η+π/2)
    pub apbp: f64,
}

impl CorrelationQuad {
    pub fn new(ab: f64, apb: f64, abp: f64, apbp: f64) -> Self {
        CorrelationQuad { ab, apb, abp, apbp }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.ab, self.apb, self.abp, self.apbp]
    }
}

/// The four setting pairs in the order `(ξ,η), (ξ+π/2,η), (ξ,η+π/2), (ξ+π/2,η+π/2)`.
pub const SETTING_PAIRS: [(bool, bool); 4] = [(false, false), (true, false), (false, true), (true, true)];

/// Position of a setting pair in [`SETTING_PAIRS`].
pub fn setting_index(alice_rotated: bool, bob_rotated: bool) -> usize {
    match (alice_rotated, bob_rotated) {
        (false, false) => 0,
        (true, false) => 1,
        (false, true) => 2,
        (true, true) => 3,
    }
}

/// Sign of each correlation in the CHSH combination.
pub const CHSH_SIGNS: [f64; 4] = [1.0, 1.0, -1.0, 1.0];

/// `sin²((Δφ + π/2)/2)`, the weight of the phase-sensitive branch.
pub fn phase_weight(delta_phi: f64) -> f64 {
    ((delta_phi + FRAC_PI_2) / 2.0).sin().powi(2)
}

pub fn scheme1_pattern_probs(xi: f64, eta: f64, delta_phi: f64) -> PatternDistribution {
    let w = phase_weight(delta_phi);
    let same = 0.5 * (((xi + eta) / 2.0).sin().powi(2) * (1.0 - w) + ((xi - eta) / 2.0).sin().powi(2) * w);
    let diff = 0.5 * (((xi + eta) / 2.0).cos().powi(2) * (1.0 - w) + ((xi - eta) / 2.0).cos().powi(2) * w);
    PatternDistribution {
        p1010: same,
        p0101: same,
        p1001: diff,
        p0110: diff,
    }
}

pub fn scheme1_correlation(xi: f64, eta: f64, delta_phi: f64) -> f64 {
    let k = (delta_phi / 2.0 + FRAC_PI_4).sin().powi(2);
    let kc = (delta_phi / 2.0 + FRAC_PI_4).cos().powi(2);
    -k * (xi - eta).cos() - kc * (xi + eta).cos()
}

pub fn scheme1_correlation_quad(xi: f64, eta: f64, delta_phi: f64) -> CorrelationQuad {
    let e = |a: f64, b: f64| scheme1_correlation(a, b, delta_phi);
    CorrelationQuad::new(
        e(xi, eta),
        e(xi + FRAC_PI_2, eta),
        e(xi, eta + FRAC_PI_2),
        e(xi + FRAC_PI_2, eta + FRAC_PI_2),
    )
}

/// `|E(ξ,η) + E(ξ+π/2,η) − E(ξ,η+π/2) + E(ξ+π/2,η+π/2)|`.
pub fn chsh_s(q: &CorrelationQuad) -> f64 {
    (q.ab + q.apb - q.abp + q.apbp).abs()
}

pub fn s_scheme1(xi_minus_eta: f64, delta_phi: f64) -> f64 {
    (2.0 * phase_weight(delta_phi) * (xi_minus_eta.sin() - xi_minus_eta.cos())).abs()
}

/// S after averaging the correlations over a uniformly random `Δφ`.
pub fn s_scheme1_phase_averaged(xi_minus_eta: f64) -> f64 {
    (xi_minus_eta.sin() - xi_minus_eta.cos()).abs()
}

/// S with the references locked at `Δφ = π/2`.
pub fn s_scheme2(xi_minus_eta: f64) -> f64 {
    2.0 * (xi_minus_eta.sin() - xi_minus_eta.cos()).abs()
}

/// S at the optimal axis offset `ξ − η = 3π/4` as a function of `c = cos(Δφ + π/2)`.
pub fn optimal_s_from_c(c: f64) -> f64 {
    SQRT_2 * (1.0 - c)
}

/// `Δφ` interval on `[0, π]` where the optimal-angle S exceeds 2.
pub fn violation_window() -> (f64, f64) {
    let lo = (SQRT_2 - 1.0).asin();
    (lo, PI - lo)
}

/// Value of `c = cos(Δφ + π/2)` below which the optimal-angle S exceeds 2.
pub fn violation_c_threshold() -> f64 {
    1.0 - SQRT_2
}

/// Mean photon numbers at the two outputs of the readout splitter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemainderIntensities {
    pub n15: f64,
    pub n16: f64,
}

impl RemainderIntensities {
    /// `(N16 − N15)/(N16 + N15)`.
    pub fn ratio(&self) -> Option<f64> {
        let total = self.n15 + self.n16;
        (total > 0.0).then(|| (self.n16 - self.n15) / total)
    }
}

/// Remainder-beam intensities for coherent references of magnitude `alpha_mag`
/// skimmed at transmittivity `1/alpha_mag`.
///
/// Each remainder beam carries `|α|² − 1` photons on average, so the two
/// readout ports share `2(|α|² − 1)`.
pub fn scheme3_remainder_intensities(delta_phi: f64, alpha_mag: f64) -> Result<RemainderIntensities> {
    if !(alpha_mag >= 1.0) {
        return Err(Error::Domain(format!(
            "reference magnitude {alpha_mag} < 1 cannot supply a unit-amplitude skim"
        )));
    }
    let total = 2.0 * (alpha_mag * alpha_mag - 1.0);
    let w = phase_weight(delta_phi);
    Ok(RemainderIntensities {
        n15: total * w,
        n16: total * (1.0 - w),
    })
}

/// How the readout ratio is converted to `c = cos(Δφ + π/2)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErratumMode {
    /// ratio = cos(Δφ + π/2)
    #[default]
    Derived,
    /// ratio = 2 cos(Δφ + π/2), as printed; kept for side-by-side comparison
    Printed,
}

pub fn delta_phi_cos_from_ratio(ratio: f64) -> Result<f64> {
    if !ratio.is_finite() || ratio.abs() > 1.0 + 1e-6 {
        return Err(Error::Domain(format!("readout ratio {ratio} outside [-1, 1]")));
    }
    Ok(ratio.clamp(-1.0, 1.0))
}

impl ErratumMode {
    pub fn c_from_ratio(&self, ratio: f64) -> Result<f64> {
        match self {
            ErratumMode::Derived => delta_phi_cos_from_ratio(ratio),
            ErratumMode::Printed => delta_phi_cos_from_ratio(ratio / 2.0),
        }
    }
}

/// Principal `Δφ ∈ [−π/2, π/2]` with `cos(Δφ + π/2) = c`.
pub fn principal_delta_phi(c: f64) -> f64 {
    (-c.clamp(-1.0, 1.0)).asin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TAU: f64 = 2.0 * PI;

    #[test]
    fn pattern_probs_examples() {
        let d = scheme1_pattern_probs(0.0, 0.0, FRAC_PI_2);
        assert!(d.p1010.abs() < 1e-15);
        assert!((d.p1001 - 0.5).abs() < 1e-15);

        for &xi in &[0.0, 0.4, 1.3, 2.9] {
            let d = scheme1_pattern_probs(xi, xi, 3.0 * FRAC_PI_2);
            assert!((d.p1010 - 0.5 * xi.sin().powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn correlation_examples() {
        for &(xi, eta) in &[(0.3, 1.1), (2.0, -0.5), (3.0 * FRAC_PI_4, 0.0)] {
            assert!((scheme1_correlation(xi, eta, FRAC_PI_2) + (xi - eta).cos()).abs() < 1e-12);
        }
        for &dphi in &[0.0, 1.0, 2.5, 4.0] {
            assert!((scheme1_correlation(0.0, 0.0, dphi) + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn chsh_examples() {
        assert_eq!(chsh_s(&CorrelationQuad::new(0.0, 0.0, 0.0, 0.0)), 0.0);
        let q = scheme1_correlation_quad(3.0 * FRAC_PI_4, 0.0, FRAC_PI_2);
        assert!((chsh_s(&q) - 2.0 * SQRT_2).abs() < 1e-12);
        // every factorizable deterministic assignment stays within the classical bound
        for bits in 0..16u32 {
            let v = |k: u32| if bits >> k & 1 == 1 { 1.0 } else { -1.0 };
            let (a, ap, b, bp) = (v(0), v(1), v(2), v(3));
            let s = chsh_s(&CorrelationQuad::new(a * b, ap * b, a * bp, ap * bp));
            assert!(s <= 2.0 + 1e-15);
        }
    }

    #[test]
    fn s_value_examples() {
        assert!((s_scheme1(3.0 * FRAC_PI_4, FRAC_PI_2) - 2.0 * SQRT_2).abs() < 1e-12);
        assert!(s_scheme1(1.234, 3.0 * FRAC_PI_2) < 1e-15);
        assert!((s_scheme1_phase_averaged(3.0 * FRAC_PI_4) - SQRT_2).abs() < 1e-15);
        assert!(s_scheme1_phase_averaged(FRAC_PI_4).abs() < 1e-15);
        assert!((s_scheme2(3.0 * FRAC_PI_4) - 2.0 * SQRT_2).abs() < 1e-12);
        assert!(s_scheme2(FRAC_PI_4).abs() < 1e-15);
    }

    /// Composite Simpson rule; independent of the closed-form average.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let x = a + i as f64 * h;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        acc * h / 3.0
    }

    #[test]
    fn phase_average_matches_quadrature() {
        for &d in &[3.0 * FRAC_PI_4, 0.3, 1.9, -2.2] {
            let avg = simpson(|p| s_scheme1(d, p), 0.0, TAU, 2000) / TAU;
            assert!((avg - s_scheme1_phase_averaged(d)).abs() < 1e-9);
        }
        let avg = simpson(|p| s_scheme1(3.0 * FRAC_PI_4, p), 0.0, TAU, 2000) / TAU;
        assert!((avg - SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn remainder_intensity_examples() {
        let r = scheme3_remainder_intensities(FRAC_PI_2, SQRT_2).unwrap();
        assert!((r.n15 - 2.0).abs() < 1e-12 && r.n16.abs() < 1e-12);
        assert!((r.ratio().unwrap() + 1.0).abs() < 1e-12);
        let r = scheme3_remainder_intensities(3.0 * FRAC_PI_2, SQRT_2).unwrap();
        assert!(r.n15.abs() < 1e-12);
        assert!((r.ratio().unwrap() - 1.0).abs() < 1e-12);
        assert!(scheme3_remainder_intensities(0.0, 0.9).is_err());
    }

    #[test]
    fn ratio_to_c() {
        assert_eq!(delta_phi_cos_from_ratio(-1.0).unwrap(), -1.0);
        assert!((phase_weight(PI) - 0.5).abs() < 1e-15);
        assert_eq!(1.0 - delta_phi_cos_from_ratio(1.0).unwrap(), 0.0);
        // ratio 0 → weight ½ → S = √2 at the optimal angle
        let c = delta_phi_cos_from_ratio(0.0).unwrap();
        assert!(((1.0 - c) / 2.0 - 0.5).abs() < 1e-15);
        assert!((optimal_s_from_c(c) - SQRT_2).abs() < 1e-15);
        assert_eq!(delta_phi_cos_from_ratio(1.0 + 5e-7).unwrap(), 1.0);
        assert!(delta_phi_cos_from_ratio(1.01).is_err());
        assert!((ErratumMode::Printed.c_from_ratio(-1.0).unwrap() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn violation_window_values() {
        let (lo, hi) = violation_window();
        assert!((lo - 0.4271).abs() < 1e-4, "{lo}");
        assert!((hi - 2.7145).abs() < 1e-4, "{hi}");
        let at = |d: f64| s_scheme1(3.0 * FRAC_PI_4, d);
        assert!(at(lo + 1e-6) > 2.0 && at(lo - 1e-6) < 2.0);
        assert!(at(hi - 1e-6) > 2.0 && at(hi + 1e-6) < 2.0);
        assert!((principal_delta_phi(violation_c_threshold()) - lo).abs() < 1e-12);
    }

    #[test]
    fn setting_geometry() {
        let s = MeasurementSetting::new(0.3, true);
        assert!((s.angle() - (0.3 + FRAC_PI_2)).abs() < 1e-15);
        assert_eq!(MeasurementSetting::new(0.3, false).angle(), 0.3);
        assert!((PhaseSample::new(1.0, 0.5).delta() - (TAU - 0.5)).abs() < 1e-12);
        for (i, &(a, b)) in SETTING_PAIRS.iter().enumerate() {
            assert_eq!(setting_index(a, b), i);
        }
        for p in Pattern::ALL {
            assert_eq!(Pattern::from_signs(p.alice_sign(), p.bob_sign()), p);
            assert_eq!(Pattern::from_occupations(&p.occupations()), Some(p));
        }
    }

    proptest! {
        #[test]
        fn distribution_is_normalized_and_symmetric(xi in -7.0f64..7.0, eta in -7.0f64..7.0, d in -7.0f64..7.0) {
            let p = scheme1_pattern_probs(xi, eta, d);
            prop_assert!((p.sum() - 1.0).abs() < 1e-12);
            prop_assert_eq!(p.p1010, p.p0101);
            prop_assert_eq!(p.p1001, p.p0110);
            prop_assert!((p.correlation() - scheme1_correlation(xi, eta, d)).abs() < 1e-12);
        }

        #[test]
        fn chsh_collapses_to_closed_form(xi in -7.0f64..7.0, eta in -7.0f64..7.0, d in -7.0f64..7.0) {
            let q = scheme1_correlation_quad(xi, eta, d);
            prop_assert!((chsh_s(&q) - s_scheme1(xi - eta, d)).abs() < 1e-12);
            for e in q.as_array() {
                prop_assert!(e.abs() <= 1.0 + 1e-15);
            }
        }

        #[test]
        fn scheme2_is_scheme1_at_quarter_turn(x in -7.0f64..7.0) {
            prop_assert!((s_scheme2(x) - s_scheme1(x, FRAC_PI_2)).abs() < 1e-12);
            prop_assert!((s_scheme2(x) - 2.0 * s_scheme1_phase_averaged(x)).abs() < 1e-12);
        }

        #[test]
        fn intensities_conserve_photons(d in -7.0f64..7.0, a in 1.0f64..5.0) {
            let r = scheme3_remainder_intensities(d, a).unwrap();
            prop_assert!((r.n15 + r.n16 - 2.0 * (a * a - 1.0)).abs() < 1e-10);
            if a > 1.0 {
                prop_assert!((r.ratio().unwrap() - (d + FRAC_PI_2).cos()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn tsirelson_and_argmax_on_grid() {
        let n = 400;
        for i in 0..n {
            let d = TAU * i as f64 / n as f64;
            let mut best = (f64::MIN, 0.0);
            for j in 0..n {
                let x = TAU * j as f64 / n as f64;
                let s = s_scheme1(x, d);
                assert!(s <= 2.0 * SQRT_2 + 1e-12);
                if s > best.0 + 1e-12 {
                    best = (s, x);
                }
            }
            if phase_weight(d) > 1e-6 {
                assert!((best.1 - 3.0 * FRAC_PI_4).abs() < TAU / n as f64 + 1e-12, "argmax {} at Δφ {d}", best.1);
            }
        }
    }

    #[test]
    fn monotone_in_c() {
        let mut last = f64::INFINITY;
        for i in 0..=200 {
            let c = -1.0 + 2.0 * i as f64 / 200.0;
            let d = principal_delta_phi(c);
            let s = s_scheme1(3.0 * FRAC_PI_4, d);
            assert!((s - optimal_s_from_c(c)).abs() < 1e-12);
            assert!(s < last || i == 0);
            last = s;
        }
    }
}

//! The three interferometers, built from [`crate::fock`] primitives.
//!
//! Modes are labelled by optical path number:
//!
//! * paths 1, 2: the single photon after BS1
//! * paths 3, 8: Alice's and Bob's reference inputs to BS2 / BS3
//! * paths 4, 5 (Alice) and 6, 7 (Bob): detector ports
//! * paths 9, 10 / 12, 13: inputs of the reference splitters BS4 / BS5
//! * paths 11, 14: remainder beams left over after skimming
//! * paths 15, 16: outputs of the readout splitter BS6
//!
//! All runs post-select on exactly one click at Alice (paths 4+5) and one at
//! Bob (paths 6+7). Because BS2 and BS3 conserve photon number on their two
//! inputs, the projection is taken on paths 1+3 and 2+8 before the variable
//! splitters, which keeps the intermediate states small.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::{MeasurementSetting, Pattern, PatternDistribution, RemainderIntensities};
use crate::error::{Error, FockError, Result};
use crate::fock::{
    coherent_cutoff, poisson_weight, BeamSplitter, Complex, ModeId, StateVector, DEFAULT_TAIL_TOLERANCE,
    MAX_CUTOFF,
};

pub const fn path(n: u16) -> ModeId {
    ModeId(n)
}

pub const DETECTOR_PATHS: [ModeId; 4] = [path(4), path(5), path(6), path(7)];
pub const REMAINDER_PATHS: [ModeId; 2] = [path(11), path(14)];
pub const READOUT_PATHS: [ModeId; 2] = [path(15), path(16)];

/// Default number of phase points when a phase-averaged reference is expanded exactly.
pub const DEFAULT_QUADRATURE: usize = 64;

/// Truncation of coherent references in Schemes 1 and 2.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub cutoff: u16,
    /// Maximum discarded Poisson tail; `1.0` disables the check.
    pub tail_tolerance: f64,
}

impl Truncation {
    /// Cutoff chosen so that the discarded tail of a coherent state of the
    /// given magnitude stays below the default tolerance.
    pub fn for_magnitude(magnitude: f64) -> Self {
        Truncation {
            cutoff: coherent_cutoff(magnitude, DEFAULT_TAIL_TOLERANCE).max(2),
            tail_tolerance: DEFAULT_TAIL_TOLERANCE,
        }
    }

    /// Hard truncation at `cutoff` without the tail check. The post-selected
    /// pattern distribution only involves the 0- and 1-photon components of
    /// the references, so it is exact for any cutoff ≥ 1; the acceptance
    /// probability is the truncated-space value.
    pub fn fixed(cutoff: u16) -> Self {
        Truncation {
            cutoff,
            tail_tolerance: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.cutoff < 2 || self.cutoff > MAX_CUTOFF {
            return Err(Error::Config(format!(
                "reference cutoff {} outside 2..={MAX_CUTOFF}",
                self.cutoff
            )));
        }
        Ok(())
    }
}

/// Family of reference state one party feeds into the skimming splitter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReferenceKind {
    CoherentFixedPhase { magnitude: f64, phase: f64 },
    PhaseAveragedCoherent { magnitude: f64 },
    Number { n: u16 },
    /// `weights[n] = P(n)`.
    NumberMixture { weights: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSpec {
    pub kind: ReferenceKind,
    pub cutoff: u16,
}

/// A pure component of a reference state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PureReference {
    Coherent(Complex),
    Number(u16),
}

impl PureReference {
    pub fn state(&self, mode: ModeId, cutoff: u16, tail_tolerance: f64) -> Result<StateVector> {
        Ok(match *self {
            PureReference::Coherent(alpha) => {
                StateVector::coherent_with_tolerance(mode, alpha, cutoff, tail_tolerance)?
            }
            PureReference::Number(n) => StateVector::fock(mode, n, cutoff.max(n).max(1))?,
        })
    }
}

impl ReferenceSpec {
    pub fn coherent(magnitude: f64, phase: f64) -> Self {
        ReferenceSpec {
            kind: ReferenceKind::CoherentFixedPhase { magnitude, phase },
            cutoff: coherent_cutoff(magnitude, DEFAULT_TAIL_TOLERANCE).max(2),
        }
    }

    pub fn phase_averaged(magnitude: f64) -> Self {
        ReferenceSpec {
            kind: ReferenceKind::PhaseAveragedCoherent { magnitude },
            cutoff: coherent_cutoff(magnitude, DEFAULT_TAIL_TOLERANCE).max(2),
        }
    }

    pub fn number(n: u16) -> Self {
        ReferenceSpec {
            kind: ReferenceKind::Number { n },
            cutoff: n.max(1),
        }
    }

    pub fn number_mixture(weights: Vec<f64>) -> Self {
        let cutoff = (weights.len().saturating_sub(1) as u16).max(1);
        ReferenceSpec {
            kind: ReferenceKind::NumberMixture { weights },
            cutoff,
        }
    }

    /// Poisson mixture with mean `magnitude²`, truncated where the tail drops
    /// below the default tolerance and renormalized.
    pub fn poisson(magnitude: f64) -> Self {
        let cutoff = coherent_cutoff(magnitude, DEFAULT_TAIL_TOLERANCE).max(2);
        let mut weights: Vec<f64> = (0..=cutoff as usize)
            .map(|n| poisson_weight(magnitude * magnitude, n))
            .collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        ReferenceSpec {
            kind: ReferenceKind::NumberMixture { weights },
            cutoff,
        }
    }

    pub fn with_cutoff(mut self, cutoff: u16) -> Self {
        self.cutoff = cutoff;
        self
    }

    pub fn is_phase_averaged(&self) -> bool {
        matches!(self.kind, ReferenceKind::PhaseAveragedCoherent { .. })
    }

    pub fn is_coherent(&self) -> bool {
        matches!(
            self.kind,
            ReferenceKind::CoherentFixedPhase { .. } | ReferenceKind::PhaseAveragedCoherent { .. }
        )
    }

    pub fn mean_photon_number(&self) -> f64 {
        match &self.kind {
            ReferenceKind::CoherentFixedPhase { magnitude, .. }
            | ReferenceKind::PhaseAveragedCoherent { magnitude } => magnitude * magnitude,
            ReferenceKind::Number { n } => *n as f64,
            ReferenceKind::NumberMixture { weights } => {
                weights.iter().enumerate().map(|(n, w)| n as f64 * w).sum()
            }
        }
    }

    /// Amplitude transmittivity that skims off a mean amplitude of one.
    pub fn skim_transmittivity(&self) -> Result<f64> {
        let mean = self.mean_photon_number();
        if !(mean >= 1.0) {
            return Err(Error::Config(format!(
                "reference mean photon number {mean} < 1; skimming needs |α| ≥ 1 (or N ≥ 1)"
            )));
        }
        Ok(1.0 / mean.sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if self.cutoff == 0 || self.cutoff > MAX_CUTOFF {
            return Err(Error::Config(format!(
                "reference cutoff {} outside 1..={MAX_CUTOFF}",
                self.cutoff
            )));
        }
        match &self.kind {
            ReferenceKind::CoherentFixedPhase { magnitude, phase } => {
                if !magnitude.is_finite() || *magnitude < 0.0 || !phase.is_finite() {
                    return Err(Error::Config(format!("bad coherent amplitude {magnitude}∠{phase}")));
                }
            }
            ReferenceKind::PhaseAveragedCoherent { magnitude } => {
                if !magnitude.is_finite() || *magnitude < 0.0 {
                    return Err(Error::Config(format!("bad coherent magnitude {magnitude}")));
                }
            }
            ReferenceKind::Number { n } => {
                if *n < 1 {
                    return Err(Error::Config("number reference needs N ≥ 1".into()));
                }
                if *n > self.cutoff {
                    return Err(Error::Config(format!(
                        "cutoff {} too small for a {n}-photon reference",
                        self.cutoff
                    )));
                }
            }
            ReferenceKind::NumberMixture { weights } => {
                if weights.iter().any(|w| !(*w >= 0.0)) {
                    return Err(Error::Config("number-mixture weights must be nonnegative".into()));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!("number-mixture weights sum to {total}, not 1")));
                }
                if weights.len() > self.cutoff as usize + 1 {
                    return Err(Error::Config(format!(
                        "cutoff {} too small for a mixture reaching n = {}",
                        self.cutoff,
                        weights.len() - 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Decompose into weighted pure components. Phase-averaged coherent
    /// states use `quadrature` equally spaced phases.
    pub fn components(&self, quadrature: usize) -> Vec<(f64, PureReference)> {
        match &self.kind {
            ReferenceKind::CoherentFixedPhase { magnitude, phase } => {
                vec![(1.0, PureReference::Coherent(Complex::from_polar(*magnitude, *phase)))]
            }
            ReferenceKind::PhaseAveragedCoherent { magnitude } => (0..quadrature)
                .map(|k| {
                    let phi = 2.0 * std::f64::consts::PI * k as f64 / quadrature as f64;
                    (
                        1.0 / quadrature as f64,
                        PureReference::Coherent(Complex::from_polar(*magnitude, phi)),
                    )
                })
                .collect(),
            ReferenceKind::Number { n } => vec![(1.0, PureReference::Number(*n))],
            ReferenceKind::NumberMixture { weights } => weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w > 0.0)
                .map(|(n, w)| (*w, PureReference::Number(n as u16)))
                .collect(),
        }
    }
}

/// How the remainder beams are read out at BS6.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Readout {
    /// Mean photon numbers on paths 15 and 16.
    #[default]
    Deterministic,
    /// One sampled photon-number pair on paths 15 and 16.
    Sampled,
}

/// Exact outcome of one pure-state run of a circuit for fixed settings.
#[derive(Clone, Debug)]
pub struct CircuitResult {
    pub alice_angle: f64,
    pub bob_angle: f64,
    /// Probability of one click per party.
    pub acceptance: f64,
    /// Pattern distribution given acceptance.
    pub conditional: PatternDistribution,
    /// Normalized post-selected state on the detector paths, plus the
    /// remainder paths 11 and 14 for Scheme 3.
    pub accepted: StateVector,
}

/// One point of the joint distribution of detector pattern and readout counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JointOutcome {
    pub pattern: Pattern,
    pub n15: u16,
    pub n16: u16,
}

impl CircuitResult {
    pub fn correlation(&self) -> f64 {
        self.conditional.correlation()
    }

    pub fn has_remainder(&self) -> bool {
        REMAINDER_PATHS.iter().all(|m| self.accepted.modes().contains(m))
    }

    fn require_remainder(&self) -> Result<()> {
        if !self.has_remainder() {
            return Err(Error::Domain(
                "no remainder beams on paths 11 and 14; readout needs a Scheme 3 run".into(),
            ));
        }
        Ok(())
    }

    /// Post-selected state further conditioned on a detector pattern (or the
    /// full accepted state when `given` is `None`).
    pub fn conditioned_on(&self, given: Option<Pattern>) -> Result<StateVector> {
        match given {
            None => Ok(self.accepted.clone()),
            Some(p) => {
                let occ = p.occupations();
                let (_, state) = self
                    .accepted
                    .postselect(&DETECTOR_PATHS, |o| o == occ)?
                    .into_state()?;
                Ok(state)
            }
        }
    }

    /// Accepted state after BS6, with the remainder beams relabelled to paths 15 and 16.
    pub fn after_readout_splitter(&self, given: Option<Pattern>) -> Result<StateVector> {
        self.require_remainder()?;
        let s = self.conditioned_on(given)?;
        let i11 = s.mode_index(path(11))?;
        let i14 = s.mode_index(path(14))?;
        let needed = s
            .terms()
            .iter()
            .map(|(k, _)| k[i11] + k[i14])
            .max()
            .unwrap_or(0)
            .max(s.cutoff());
        let out = s
            .with_cutoff(needed)?
            .beam_splitter(path(14), path(11), BeamSplitter::balanced())?
            .relabel_all(&[(path(14), path(15)), (path(11), path(16))])?;
        Ok(out)
    }

    /// `P(pattern, N15, N16 | accepted)`.
    pub fn joint_distribution(&self) -> Result<Vec<(JointOutcome, f64)>> {
        let out = self.after_readout_splitter(None)?;
        let mut modes = DETECTOR_PATHS.to_vec();
        modes.extend_from_slice(&READOUT_PATHS);
        out.marginal(&modes)?
            .into_iter()
            .map(|(occ, p)| {
                let pattern = Pattern::from_occupations(&occ[..4])
                    .ok_or_else(|| Error::Domain(format!("unexpected detector pattern {occ:?}")))?;
                Ok((
                    JointOutcome {
                        pattern,
                        n15: occ[4],
                        n16: occ[5],
                    },
                    p,
                ))
            })
            .collect()
    }
}

/// Pattern distribution of a state supported on one-click-per-party patterns.
fn pattern_distribution(state: &StateVector) -> Result<PatternDistribution> {
    let idx: Vec<usize> = DETECTOR_PATHS
        .iter()
        .map(|&m| state.mode_index(m))
        .collect::<std::result::Result<_, FockError>>()?;
    let mut acc = [0.0; 4];
    for (ket, a) in state.terms() {
        let occ = [ket[idx[0]], ket[idx[1]], ket[idx[2]], ket[idx[3]]];
        let p = Pattern::from_occupations(&occ)
            .ok_or_else(|| Error::Domain(format!("ket outside the accepted subspace: {ket}")))?;
        acc[p as usize] += a.norm_sqr();
    }
    let total: f64 = acc.iter().sum();
    Ok(PatternDistribution::from_fn(|p| acc[p as usize] / total))
}

/// BS1 output `(|01⟩ + i|10⟩)/√2` on paths 1, 2, photon entering on `input`.
fn single_photon(input: ModeId) -> Result<StateVector> {
    let other = if input == path(2) { path(1) } else { path(2) };
    let s = StateVector::fock(input, 1, 1)?.tensor(&StateVector::vacuum(&[other], 1)?)?;
    Ok(s.beam_splitter(path(1), path(2), BeamSplitter::balanced())?)
}

/// Post-select one photon on paths 1+3 and one on 2+8, then apply BS2 and BS3.
fn detect(state: StateVector, alice: f64, bob: f64) -> Result<Option<CircuitResult>> {
    let accepted = state.project(&[path(1), path(3), path(2), path(8)], |o| {
        o[0] + o[1] == 1 && o[2] + o[3] == 1
    })?;
    // `state` may already be sub-normalized by the skim projection; its
    // unprojected parent had unit norm.
    let acceptance = accepted.norm_sqr();
    if accepted.is_empty() || acceptance <= f64::MIN_POSITIVE {
        return Ok(None);
    }
    let out = accepted
        .normalized()?
        .beam_splitter(path(1), path(3), BeamSplitter::new(alice))?
        .relabel_all(&[(path(1), path(4)), (path(3), path(5))])?
        .beam_splitter(path(2), path(8), BeamSplitter::new(bob))?
        .relabel_all(&[(path(2), path(6)), (path(8), path(7))])?;
    Ok(Some(CircuitResult {
        alice_angle: alice,
        bob_angle: bob,
        acceptance,
        conditional: pattern_distribution(&out)?,
        accepted: out,
    }))
}

fn require_accepted(r: Option<CircuitResult>) -> Result<CircuitResult> {
    r.ok_or(Error::Fock(FockError::ZeroProbability))
}

/// Scheme 1 with unit-amplitude coherent references of phases `φ_a`, `φ_b`.
pub fn run_scheme1_exact(xi: f64, eta: f64, phi_a: f64, phi_b: f64, trunc: Truncation) -> Result<CircuitResult> {
    run_scheme1_with_references(
        xi,
        eta,
        Complex::from_polar(1.0, phi_a),
        Complex::from_polar(1.0, phi_b),
        trunc,
    )
}

/// Scheme 1 with arbitrary coherent amplitudes on paths 3 and 8.
pub fn run_scheme1_with_references(
    xi: f64,
    eta: f64,
    alpha_a: Complex,
    alpha_b: Complex,
    trunc: Truncation,
) -> Result<CircuitResult> {
    trunc.validate()?;
    let refs = StateVector::coherent_with_tolerance(path(3), alpha_a, trunc.cutoff, trunc.tail_tolerance)?
        .tensor(&StateVector::coherent_with_tolerance(
            path(8),
            alpha_b,
            trunc.cutoff,
            trunc.tail_tolerance,
        )?)?;
    let state = single_photon(path(2))?.tensor(&refs)?;
    require_accepted(detect(state, xi, eta)?)
}

/// Scheme 2: both references come from one coherent state `|√2 e^{iφ}⟩`
/// split at a balanced BS4, which locks `Δφ` at π/2.
pub fn run_scheme2_exact(xi: f64, eta: f64, phi: f64, trunc: Truncation) -> Result<CircuitResult> {
    run_scheme2_with_input(xi, eta, Complex::from_polar(std::f64::consts::SQRT_2, phi), trunc)
}

pub fn run_scheme2_with_input(xi: f64, eta: f64, alpha: Complex, trunc: Truncation) -> Result<CircuitResult> {
    trunc.validate()?;
    // BS4: path 9 transmits to path 8, reflects (×i) to path 3.
    let refs = StateVector::coherent_with_tolerance(path(9), alpha, trunc.cutoff, trunc.tail_tolerance)?
        .tensor(&StateVector::vacuum(&[path(10)], trunc.cutoff)?)?
        .beam_splitter(path(9), path(10), BeamSplitter::balanced())?
        .relabel_all(&[(path(9), path(8)), (path(10), path(3))])?;
    // With Alice's reference carrying the extra i, the photon enters BS1 from
    // path 1, giving |10⟩ + i|01⟩ on paths 1, 2.
    let state = single_photon(path(1))?.tensor(&refs)?;
    require_accepted(detect(state, xi, eta)?)
}

/// One party's reference after skimming: the skimmed beam on `to_circuit`,
/// the remainder on `remainder`, projected to at most one skimmed photon.
fn skim(
    reference: &PureReference,
    transmittivity: f64,
    cutoff: u16,
    tail_tolerance: f64,
    input: ModeId,
    vacuum: ModeId,
    to_circuit: ModeId,
    remainder: ModeId,
) -> Result<StateVector> {
    let cutoff = match reference {
        PureReference::Number(n) => cutoff.max(*n).max(1),
        PureReference::Coherent(_) => cutoff,
    };
    let s = reference
        .state(input, cutoff, tail_tolerance)?
        .tensor(&StateVector::vacuum(&[vacuum], cutoff)?)?
        .beam_splitter(input, vacuum, BeamSplitter::with_transmittivity(transmittivity)?)?
        .relabel_all(&[(input, to_circuit), (vacuum, remainder)])?;
    // More than one skimmed photon can never pass the one-click post-selection.
    Ok(s.project(&[to_circuit], |o| o[0] <= 1)?)
}

#[derive(Clone, Copy, Debug)]
pub struct PureScheme3 {
    pub alice: PureReference,
    pub bob: PureReference,
    pub alice_transmittivity: f64,
    pub bob_transmittivity: f64,
    pub alice_cutoff: u16,
    pub bob_cutoff: u16,
    pub tail_tolerance: f64,
}

impl PureScheme3 {
    /// Exact run for fixed settings; `None` when no component passes post-selection.
    pub fn run(&self, xi: f64, eta: f64) -> Result<Option<CircuitResult>> {
        let alice = skim(
            &self.alice,
            self.alice_transmittivity,
            self.alice_cutoff,
            self.tail_tolerance,
            path(10),
            path(9),
            path(3),
            path(11),
        )?;
        let bob = skim(
            &self.bob,
            self.bob_transmittivity,
            self.bob_cutoff,
            self.tail_tolerance,
            path(13),
            path(12),
            path(8),
            path(14),
        )?;
        let state = single_photon(path(2))?.tensor(&alice)?.tensor(&bob)?;
        detect(state, xi, eta)
    }
}

/// Scheme 3 for pure references; errors when nothing passes post-selection.
pub fn run_scheme3_pure(xi: f64, eta: f64, config: &PureScheme3) -> Result<CircuitResult> {
    require_accepted(config.run(xi, eta)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scheme3Options {
    /// Phase points used to expand a phase-averaged coherent reference.
    pub quadrature: usize,
    pub tail_tolerance: f64,
}

impl Default for Scheme3Options {
    fn default() -> Self {
        Scheme3Options {
            quadrature: DEFAULT_QUADRATURE,
            tail_tolerance: DEFAULT_TAIL_TOLERANCE,
        }
    }
}

#[derive(Clone, Debug)]
pub struct WeightedRun {
    pub weight: f64,
    pub alice: PureReference,
    pub bob: PureReference,
    pub run: CircuitResult,
}

/// Scheme 3 for possibly mixed references: a weighted ensemble of pure runs.
#[derive(Clone, Debug)]
pub struct Scheme3Result {
    pub components: Vec<WeightedRun>,
    pub acceptance: f64,
    pub conditional: PatternDistribution,
}

impl Scheme3Result {
    /// `P(accepted, pattern, N15, N16)` summed over the ensemble.
    pub fn joint_distribution(&self) -> Result<BTreeMap<JointOutcome, f64>> {
        let mut out = BTreeMap::new();
        for c in &self.components {
            let scale = c.weight * c.run.acceptance;
            for (o, p) in c.run.joint_distribution()? {
                *out.entry(o).or_insert(0.0) += scale * p;
            }
        }
        Ok(out)
    }

    /// Mean readout intensities over the ensemble, given acceptance.
    pub fn mean_intensities(&self) -> Result<RemainderIntensities> {
        let (mut n15, mut n16) = (0.0, 0.0);
        for c in &self.components {
            let r = remainder_means(&c.run, None)?;
            let w = c.weight * c.run.acceptance / self.acceptance;
            n15 += w * r.n15;
            n16 += w * r.n16;
        }
        Ok(RemainderIntensities { n15, n16 })
    }
}

pub fn scheme3_config(
    a: PureReference,
    b: PureReference,
    ref_a: &ReferenceSpec,
    ref_b: &ReferenceSpec,
    tail_tolerance: f64,
) -> Result<PureScheme3> {
    Ok(PureScheme3 {
        alice: a,
        bob: b,
        alice_transmittivity: ref_a.skim_transmittivity()?,
        bob_transmittivity: ref_b.skim_transmittivity()?,
        alice_cutoff: ref_a.cutoff,
        bob_cutoff: ref_b.cutoff,
        tail_tolerance,
    })
}

pub fn run_scheme3_exact(
    xi: f64,
    eta: f64,
    ref_a: &ReferenceSpec,
    ref_b: &ReferenceSpec,
    opts: &Scheme3Options,
) -> Result<Scheme3Result> {
    ref_a.validate()?;
    ref_b.validate()?;
    if opts.quadrature == 0 {
        return Err(Error::Config("quadrature needs at least one phase point".into()));
    }
    let mut components = Vec::new();
    for (wa, a) in ref_a.components(opts.quadrature) {
        for (wb, b) in ref_b.components(opts.quadrature) {
            let cfg = scheme3_config(a, b, ref_a, ref_b, opts.tail_tolerance)?;
            if let Some(run) = cfg.run(xi, eta)? {
                components.push(WeightedRun {
                    weight: wa * wb,
                    alice: a,
                    bob: b,
                    run,
                });
            }
        }
    }
    let acceptance: f64 = components.iter().map(|c| c.weight * c.run.acceptance).sum();
    if components.is_empty() || acceptance <= f64::MIN_POSITIVE {
        return Err(Error::Fock(FockError::ZeroProbability));
    }
    let conditional = PatternDistribution::from_fn(|p| {
        components
            .iter()
            .map(|c| c.weight * c.run.acceptance * c.run.conditional.get(p))
            .sum::<f64>()
            / acceptance
    });
    Ok(Scheme3Result {
        components,
        acceptance,
        conditional,
    })
}

/// Mean counts on paths 15 and 16, applying BS6 to the remainder state.
pub fn remainder_means(result: &CircuitResult, given: Option<Pattern>) -> Result<RemainderIntensities> {
    let out = result.after_readout_splitter(given)?;
    Ok(RemainderIntensities {
        n15: out.mean_occupation(path(15))?,
        n16: out.mean_occupation(path(16))?,
    })
}

/// Same quantity as [`remainder_means`], from second moments of paths 11
/// and 14 without building the post-BS6 state.
pub fn remainder_means_from_moments(result: &CircuitResult, given: Option<Pattern>) -> Result<RemainderIntensities> {
    result.require_remainder()?;
    let s = result.conditioned_on(given)?;
    let (n15, n16) = s.beam_splitter_means(path(14), path(11), BeamSplitter::balanced())?;
    Ok(RemainderIntensities { n15, n16 })
}

/// One sampled `(N15, N16)` pair from the remainder state.
pub fn sample_remainder<R: Rng + ?Sized>(
    result: &CircuitResult,
    given: Option<Pattern>,
    rng: &mut R,
) -> Result<(u16, u16)> {
    let out = result.after_readout_splitter(given)?;
    let shot = out.sample(rng)?;
    let n15 = shot.occupation(path(15)).unwrap_or(0);
    let n16 = shot.occupation(path(16)).unwrap_or(0);
    Ok((n15, n16))
}

/// Combine paths 11 and 14 at BS6 and read out paths 15 and 16.
pub fn measure_remainder_phase<R: Rng + ?Sized>(
    result: &CircuitResult,
    given: Option<Pattern>,
    readout: Readout,
    rng: &mut R,
) -> Result<RemainderIntensities> {
    match readout {
        Readout::Deterministic => remainder_means(result, given),
        Readout::Sampled => {
            let (n15, n16) = sample_remainder(result, given, rng)?;
            Ok(RemainderIntensities {
                n15: n15 as f64,
                n16: n16 as f64,
            })
        }
    }
}

/// Convenience: the exact correlation for a measurement-setting pair in Scheme 1.
pub fn scheme1_setting_correlation(
    alice: MeasurementSetting,
    bob: MeasurementSetting,
    phi_a: f64,
    phi_b: f64,
    trunc: Truncation,
) -> Result<f64> {
    Ok(run_scheme1_exact(alice.angle(), bob.angle(), phi_a, phi_b, trunc)?.correlation())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{chsh_s, scheme1_pattern_probs, CorrelationQuad};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, SQRT_2};

    fn quad_from(f: impl Fn(f64, f64) -> f64, xi: f64, eta: f64) -> CorrelationQuad {
        CorrelationQuad::new(
            f(xi, eta),
            f(xi + FRAC_PI_2, eta),
            f(xi, eta + FRAC_PI_2),
            f(xi + FRAC_PI_2, eta + FRAC_PI_2),
        )
    }

    #[test]
    fn scheme1_optimal_point() {
        let t = Truncation::for_magnitude(1.0);
        let q = quad_from(
            |a, b| run_scheme1_exact(a, b, 0.0, FRAC_PI_2, t).unwrap().correlation(),
            3.0 * FRAC_PI_4,
            0.0,
        );
        assert!((chsh_s(&q) - 2.0 * SQRT_2).abs() < 1e-9);
        let r = run_scheme1_exact(0.0, 0.0, 0.3, 0.3 + FRAC_PI_2, t).unwrap();
        assert!(r.conditional.p1010.abs() < 1e-12);
        // only the |0⟩|1⟩ and |1⟩|0⟩ reference components survive: e^{-1}·e^{-1}
        assert!((r.acceptance - (-2.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn scheme1_matches_closed_form_on_a_grid() {
        for i in 0..5 {
            for j in 0..5 {
                for k in 0..8 {
                    let xi = -1.0 + 0.9 * i as f64;
                    let eta = 0.3 + 1.1 * j as f64;
                    let d = 2.0 * PI * k as f64 / 8.0;
                    let sim = run_scheme1_exact(xi, eta, 0.4, 0.4 + d, Truncation::fixed(3)).unwrap();
                    let exact = scheme1_pattern_probs(xi, eta, d);
                    assert!(sim.conditional.max_abs_diff(&exact) < 1e-10);
                }
            }
        }
    }

    #[test]
    fn scheme1_only_depends_on_phase_difference() {
        let t = Truncation::fixed(4);
        let a = run_scheme1_exact(0.7, -0.2, 0.1, 1.3, t).unwrap();
        let b = run_scheme1_exact(0.7, -0.2, 2.1, 3.3, t).unwrap();
        assert!(a.conditional.max_abs_diff(&b.conditional) < 1e-12);
    }

    #[test]
    fn early_postselection_matches_detecting_after_splitters() {
        // Literal order: BS2 and BS3 on the full state, then post-select at the detectors.
        let (xi, eta, pa, pb) = (0.9, 2.2, 0.3, 1.7);
        let cut = 4;
        let refs = StateVector::coherent_with_tolerance(path(3), Complex::from_polar(1.0, pa), cut, 1.0)
            .unwrap()
            .tensor(&StateVector::coherent_with_tolerance(path(8), Complex::from_polar(1.0, pb), cut, 1.0).unwrap())
            .unwrap();
        let full = single_photon(path(2))
            .unwrap()
            .tensor(&refs)
            .unwrap()
            .with_cutoff(cut + 1)
            .unwrap()
            .beam_splitter(path(1), path(3), BeamSplitter::new(xi))
            .unwrap()
            .relabel_all(&[(path(1), path(4)), (path(3), path(5))])
            .unwrap()
            .beam_splitter(path(2), path(8), BeamSplitter::new(eta))
            .unwrap()
            .relabel_all(&[(path(2), path(6)), (path(8), path(7))])
            .unwrap();
        let (p, s) = full
            .postselect(&DETECTOR_PATHS, |o| o[0] + o[1] == 1 && o[2] + o[3] == 1)
            .unwrap()
            .into_state()
            .unwrap();
        let late = pattern_distribution(&s).unwrap();
        let early = run_scheme1_exact(xi, eta, pa, pb, Truncation::fixed(cut)).unwrap();
        assert!(late.max_abs_diff(&early.conditional) < 1e-12);
        assert!((p - early.acceptance).abs() < 1e-12);
    }

    #[test]
    fn scheme2_is_scheme1_at_quarter_turn_and_phase_free() {
        let t = Truncation::for_magnitude(SQRT_2);
        for &(xi, eta) in &[(3.0 * FRAC_PI_4, 0.0), (0.2, 1.4), (2.5, -0.7)] {
            let s2 = run_scheme2_exact(xi, eta, 0.0, t).unwrap();
            let s2b = run_scheme2_exact(xi, eta, 1.234, t).unwrap();
            let s1 = run_scheme1_exact(xi, eta, 0.0, FRAC_PI_2, Truncation::fixed(4)).unwrap();
            assert!(s2.conditional.max_abs_diff(&s2b.conditional) < 1e-12);
            assert!(s2.conditional.max_abs_diff(&s1.conditional) < 1e-10);
        }
        let q = quad_from(
            |a, b| run_scheme2_exact(a, b, 0.77, t).unwrap().correlation(),
            3.0 * FRAC_PI_4,
            0.0,
        );
        assert!((chsh_s(&q) - 2.0 * SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn scheme3_coherent_reduces_to_scheme1() {
        for &mag in &[SQRT_2, 2.0, 4.0] {
            let (pa, pb) = (0.4, 1.5);
            let ra = ReferenceSpec::coherent(mag, pa);
            let rb = ReferenceSpec::coherent(mag, pb);
            let r = run_scheme3_exact(0.8, -0.4, &ra, &rb, &Scheme3Options::default()).unwrap();
            let s1 = run_scheme1_exact(0.8, -0.4, pa, pb, Truncation::fixed(6)).unwrap();
            assert!(r.conditional.max_abs_diff(&s1.conditional) < 1e-10, "|α| = {mag}");
        }
    }

    #[test]
    fn skimmed_mean_photon_numbers() {
        let s = skim(
            &PureReference::Coherent(Complex::new(SQRT_2, 0.0)),
            1.0 / SQRT_2,
            18,
            DEFAULT_TAIL_TOLERANCE,
            path(10),
            path(9),
            path(3),
            path(11),
        )
        .unwrap();
        // before the ≤1 projection the means are 1 and 1; rebuild without it
        let full = StateVector::coherent(path(10), Complex::new(SQRT_2, 0.0), 18)
            .unwrap()
            .tensor(&StateVector::vacuum(&[path(9)], 18).unwrap())
            .unwrap()
            .beam_splitter(path(10), path(9), BeamSplitter::with_transmittivity(1.0 / SQRT_2).unwrap())
            .unwrap();
        assert!((full.mean_occupation(path(10)).unwrap() - 1.0).abs() < 1e-9);
        assert!((full.mean_occupation(path(9)).unwrap() - 1.0).abs() < 1e-9);
        assert!(s.norm_sqr() < 1.0);
    }

    #[test]
    fn remainder_readout_for_coherent_references() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (d, expect) in [(FRAC_PI_2, (2.0, 0.0)), (3.0 * FRAC_PI_2, (0.0, 2.0))] {
            let ra = ReferenceSpec::coherent(SQRT_2, 0.2);
            let rb = ReferenceSpec::coherent(SQRT_2, 0.2 + d);
            let r = run_scheme3_exact(0.1, 0.5, &ra, &rb, &Scheme3Options::default()).unwrap();
            let run = &r.components[0].run;
            let m = measure_remainder_phase(run, None, Readout::Deterministic, &mut rng).unwrap();
            assert!((m.n15 - expect.0).abs() < 1e-9 && (m.n16 - expect.1).abs() < 1e-9);
            let fast = remainder_means_from_moments(run, None).unwrap();
            assert!((fast.n15 - m.n15).abs() < 1e-10 && (fast.n16 - m.n16).abs() < 1e-10);
            for p in Pattern::ALL {
                let a = remainder_means(run, Some(p)).unwrap();
                let b = remainder_means_from_moments(run, Some(p)).unwrap();
                assert!((a.n15 - b.n15).abs() < 1e-10 && (a.n16 - b.n16).abs() < 1e-10);
            }
            let (s15, s16) = sample_remainder(run, Some(Pattern::P1010), &mut rng).unwrap();
            assert!(s15 as f64 + s16 as f64 >= 0.0);
        }
    }

    #[test]
    fn readout_needs_remainder_beams() {
        let r = run_scheme1_exact(0.1, 0.2, 0.0, 0.0, Truncation::fixed(3)).unwrap();
        assert!(!r.has_remainder());
        assert!(remainder_means(&r, None).is_err());
    }

    #[test]
    fn reference_validation() {
        assert!(ReferenceSpec::phase_averaged(0.5).skim_transmittivity().is_err());
        assert!(ReferenceSpec::number(0).validate().is_err());
        assert!(ReferenceSpec::number(5).with_cutoff(3).validate().is_err());
        assert!(ReferenceSpec::number_mixture(vec![0.5, 0.6]).validate().is_err());
        assert!(ReferenceSpec::number_mixture(vec![0.5, -0.1, 0.6]).validate().is_err());
        assert!((ReferenceSpec::number(4).skim_transmittivity().unwrap() - 0.5).abs() < 1e-15);
        let p = ReferenceSpec::poisson(SQRT_2);
        p.validate().unwrap();
        assert!((p.mean_photon_number() - 2.0).abs() < 1e-8);
        assert!(Truncation::fixed(1).validate().is_err());
    }

    #[test]
    fn number_state_acceptance() {
        // P(n₃=0)·P(n₈=1) with binomial(4, ¼) splitting: (3/4)⁴ · 4(1/4)(3/4)³
        let r = run_scheme3_exact(
            0.0,
            0.0,
            &ReferenceSpec::number(4),
            &ReferenceSpec::number(4),
            &Scheme3Options::default(),
        )
        .unwrap();
        assert!((r.acceptance - 8748.0 / 65536.0).abs() < 1e-14, "{}", r.acceptance);
    }
}

//! Sparse multimode bosonic states in the Fock (occupation-number) basis.
//!
//! A [`StateVector`] is a list of `(FockKet, amplitude)` pairs kept sorted by
//! ket, with amplitudes below a prune threshold dropped. Every operation
//! returns a new state; nothing is mutated in place, so states can be shared
//! freely between threads.
//!
//! Beam splitters follow the convention where the reflected amplitude picks
//! up a factor `i`: with mixing angle `θ`, the creation operators transform as
//!
//! ```text
//! a†₁ → cos(θ/2) a†₁ + i sin(θ/2) a†₂
//! a†₂ → cos(θ/2) a†₂ + i sin(θ/2) a†₁
//! ```
//!
//! so `θ = π/2` is a 50:50 splitter and the amplitude reflectivity is
//! `sin(θ/2)`. Outputs stay on the input mode labels; use
//! [`StateVector::relabel`] to rename them after the splitter.

use std::cmp::Ordering;
use std::fmt;
use std::sync::OnceLock;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::FockError;

pub type Complex = Complex64;

/// Amplitudes with magnitude below this are dropped after every operation.
pub const DEFAULT_PRUNE: f64 = 1e-15;

/// Default bound on the discarded Poisson tail of a truncated coherent state.
pub const DEFAULT_TAIL_TOLERANCE: f64 = 1e-10;

/// Largest occupation any state may hold.
pub const MAX_CUTOFF: u16 = 400;

/// Largest two-mode photon total handled by term-by-term splitting.
const DIRECT_SPLIT_MAX: usize = 3;

/// Label of an optical path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModeId(pub u16);

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Occupation numbers, one per mode of the owning state, in the state's mode order.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FockKet(SmallVec<[u16; 8]>);

impl FockKet {
    pub fn new(occupations: &[u16]) -> Self {
        FockKet(SmallVec::from_slice(occupations))
    }

    pub fn occupations(&self) -> &[u16] {
        &self.0
    }

    pub fn total(&self) -> u32 {
        self.0.iter().map(|&n| n as u32).sum()
    }

    fn concat(&self, other: &FockKet) -> FockKet {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        FockKet(v)
    }
}

impl std::ops::Index<usize> for FockKet {
    type Output = u16;
    fn index(&self, i: usize) -> &u16 {
        &self.0[i]
    }
}

impl fmt::Display for FockKet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|")?;
        for (i, n) in self.0.iter().enumerate() {
            if i > 0 && self.0.iter().any(|&n| n > 9) {
                write!(f, ",")?;
            }
            write!(f, "{n}")?;
        }
        write!(f, "⟩")
    }
}

/// Two-mode mixing element parameterized by its mixing angle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamSplitter {
    pub theta: f64,
}

impl BeamSplitter {
    pub fn new(theta: f64) -> Self {
        BeamSplitter { theta }
    }

    pub fn balanced() -> Self {
        BeamSplitter::new(std::f64::consts::FRAC_PI_2)
    }

    /// Splitter whose amplitude transmittivity is `t`, `0 ≤ t ≤ 1`.
    pub fn with_transmittivity(t: f64) -> Result<Self, FockError> {
        if !(0.0..=1.0).contains(&t) {
            return Err(FockError::InvalidParameter(format!(
                "amplitude transmittivity {t} outside [0, 1]"
            )));
        }
        Ok(BeamSplitter::new(2.0 * t.acos()))
    }

    pub fn with_reflectivity(r: f64) -> Result<Self, FockError> {
        if !(0.0..=1.0).contains(&r) {
            return Err(FockError::InvalidParameter(format!(
                "amplitude reflectivity {r} outside [0, 1]"
            )));
        }
        Ok(BeamSplitter::new(2.0 * r.asin()))
    }

    pub fn reflectivity(&self) -> f64 {
        (self.theta / 2.0).sin()
    }

    pub fn transmittivity(&self) -> f64 {
        (self.theta / 2.0).cos()
    }

    /// The splitter that undoes this one (reflection phase conjugated).
    pub fn inverse(&self) -> Self {
        BeamSplitter::new(-self.theta)
    }

    /// Single-particle transfer matrix `M`, with `a†ⱼ → Σₖ M[j][k] a†ₖ`.
    pub fn matrix(&self) -> [[Complex; 2]; 2] {
        let t = Complex::new(self.transmittivity(), 0.0);
        let r = Complex::new(0.0, self.reflectivity());
        [[t, r], [r, t]]
    }
}

/// Measured occupations on a subset of modes.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OutcomePattern {
    pub modes: Vec<ModeId>,
    pub occupations: Vec<u16>,
}

impl OutcomePattern {
    pub fn new(modes: &[ModeId], occupations: &[u16]) -> Result<Self, FockError> {
        if modes.len() != occupations.len() {
            return Err(FockError::InvalidParameter(format!(
                "pattern has {} modes but {} occupations",
                modes.len(),
                occupations.len()
            )));
        }
        Ok(OutcomePattern {
            modes: modes.to_vec(),
            occupations: occupations.to_vec(),
        })
    }

    pub fn occupation(&self, mode: ModeId) -> Option<u16> {
        self.modes
            .iter()
            .position(|&m| m == mode)
            .map(|i| self.occupations[i])
    }
}

impl fmt::Display for OutcomePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", FockKet::new(&self.occupations))?;
        let labels: Vec<String> = self.modes.iter().map(|m| m.to_string()).collect();
        write!(f, "_{{{}}}", labels.join(","))
    }
}

/// Result of projecting a state onto the subspace accepted by a predicate.
#[derive(Clone, Debug)]
pub enum PostSelection {
    Accepted { probability: f64, state: StateVector },
    /// No accepted component survived; nothing to renormalize.
    Empty,
}

impl PostSelection {
    pub fn probability(&self) -> f64 {
        match self {
            PostSelection::Accepted { probability, .. } => *probability,
            PostSelection::Empty => 0.0,
        }
    }

    pub fn into_state(self) -> Result<(f64, StateVector), FockError> {
        match self {
            PostSelection::Accepted { probability, state } => Ok((probability, state)),
            PostSelection::Empty => Err(FockError::ZeroProbability),
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, PostSelection::Empty)
    }
}

/// Sparse state over an ordered list of modes.
///
/// Terms are sorted by ket and unique. The state is not required to be
/// normalized: projections keep the discarded weight out of the norm so that
/// acceptance probabilities can be read off later with [`norm_sqr`].
///
/// [`norm_sqr`]: StateVector::norm_sqr
#[derive(Clone, Debug)]
pub struct StateVector {
    modes: Vec<ModeId>,
    cutoff: u16,
    prune: f64,
    terms: Vec<(FockKet, Complex)>,
}

fn ln_factorial(n: usize) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(2 * MAX_CUTOFF as usize + 2);
        t.push(0.0);
        for k in 1..=(2 * MAX_CUTOFF as usize + 1) {
            let prev = t[k - 1];
            t.push(prev + (k as f64).ln());
        }
        t
    });
    table[n]
}

fn binomial(n: usize, k: usize) -> f64 {
    (ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k))
        .exp()
        .round()
}

fn check_cutoff(cutoff: u16) -> Result<(), FockError> {
    if cutoff == 0 || cutoff > MAX_CUTOFF {
        return Err(FockError::InvalidParameter(format!(
            "cutoff {cutoff} outside 1..={MAX_CUTOFF}"
        )));
    }
    Ok(())
}

impl StateVector {
    /// All modes empty.
    pub fn vacuum(modes: &[ModeId], cutoff: u16) -> Result<Self, FockError> {
        if modes.is_empty() {
            return Err(FockError::EmptyModes);
        }
        check_cutoff(cutoff)?;
        check_distinct(modes)?;
        Ok(StateVector {
            modes: modes.to_vec(),
            cutoff,
            prune: DEFAULT_PRUNE,
            terms: vec![(FockKet::new(&vec![0; modes.len()]), Complex::new(1.0, 0.0))],
        })
    }

    /// Number state `|n⟩` on a single mode.
    pub fn fock(mode: ModeId, n: u16, cutoff: u16) -> Result<Self, FockError> {
        check_cutoff(cutoff)?;
        if n > cutoff {
            return Err(FockError::CutoffExceeded {
                mode,
                occupation: n,
                cutoff,
            });
        }
        Ok(StateVector {
            modes: vec![mode],
            cutoff,
            prune: DEFAULT_PRUNE,
            terms: vec![(FockKet::new(&[n]), Complex::new(1.0, 0.0))],
        })
    }

    /// Single-mode superposition `Σₙ amplitudes[n] |n⟩`, normalized.
    pub fn single_mode(mode: ModeId, amplitudes: &[Complex], cutoff: u16) -> Result<Self, FockError> {
        check_cutoff(cutoff)?;
        if amplitudes.len() > cutoff as usize + 1 {
            return Err(FockError::CutoffExceeded {
                mode,
                occupation: (amplitudes.len() - 1) as u16,
                cutoff,
            });
        }
        let terms = amplitudes
            .iter()
            .enumerate()
            .map(|(n, &a)| (FockKet::new(&[n as u16]), a))
            .collect();
        StateVector::from_terms(vec![mode], cutoff, terms)?.normalized()
    }

    /// Coherent state `|α⟩` truncated at `cutoff` photons and renormalized.
    ///
    /// Fails if the discarded Poisson tail exceeds [`DEFAULT_TAIL_TOLERANCE`].
    pub fn coherent(mode: ModeId, alpha: Complex, cutoff: u16) -> Result<Self, FockError> {
        Self::coherent_with_tolerance(mode, alpha, cutoff, DEFAULT_TAIL_TOLERANCE)
    }

    pub fn coherent_with_tolerance(
        mode: ModeId,
        alpha: Complex,
        cutoff: u16,
        tail_tolerance: f64,
    ) -> Result<Self, FockError> {
        check_cutoff(cutoff)?;
        let tail = coherent_tail_weight(alpha.norm(), cutoff);
        if tail > tail_tolerance {
            return Err(FockError::TruncationTail {
                tail,
                tolerance: tail_tolerance,
                cutoff,
            });
        }
        StateVector::single_mode(mode, &coherent_amplitudes(alpha, cutoff), cutoff)
    }

    /// Build from explicit terms; duplicate kets are summed.
    pub fn from_terms(
        modes: Vec<ModeId>,
        cutoff: u16,
        terms: Vec<(FockKet, Complex)>,
    ) -> Result<Self, FockError> {
        if modes.is_empty() {
            return Err(FockError::EmptyModes);
        }
        check_cutoff(cutoff)?;
        check_distinct(&modes)?;
        for (ket, _) in &terms {
            if ket.0.len() != modes.len() {
                return Err(FockError::InvalidParameter(format!(
                    "ket {ket} does not match {} modes",
                    modes.len()
                )));
            }
        }
        let mut s = StateVector {
            modes,
            cutoff,
            prune: DEFAULT_PRUNE,
            terms: Vec::new(),
        };
        s.terms = s.canonicalize(terms)?;
        Ok(s)
    }

    pub fn modes(&self) -> &[ModeId] {
        &self.modes
    }

    pub fn cutoff(&self) -> u16 {
        self.cutoff
    }

    pub fn prune_threshold(&self) -> f64 {
        self.prune
    }

    pub fn terms(&self) -> &[(FockKet, Complex)] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn with_cutoff(&self, cutoff: u16) -> Result<Self, FockError> {
        check_cutoff(cutoff)?;
        if let Some((ket, _)) = self.terms.iter().find(|(k, _)| k.0.iter().any(|&n| n > cutoff)) {
            let i = ket.0.iter().position(|&n| n > cutoff).unwrap();
            return Err(FockError::CutoffExceeded {
                mode: self.modes[i],
                occupation: ket.0[i],
                cutoff,
            });
        }
        Ok(StateVector {
            cutoff,
            ..self.clone()
        })
    }

    pub fn with_prune_threshold(&self, prune: f64) -> Self {
        let mut s = self.clone();
        s.prune = prune;
        s.terms.retain(|(_, a)| a.norm() >= prune);
        s
    }

    pub fn mode_index(&self, mode: ModeId) -> Result<usize, FockError> {
        self.modes
            .iter()
            .position(|&m| m == mode)
            .ok_or(FockError::UnknownMode(mode))
    }

    fn mode_indices(&self, modes: &[ModeId]) -> Result<Vec<usize>, FockError> {
        modes.iter().map(|&m| self.mode_index(m)).collect()
    }

    pub fn amplitude(&self, occupations: &[u16]) -> Complex {
        let probe = FockKet::new(occupations);
        match self.terms.binary_search_by(|(k, _)| k.cmp(&probe)) {
            Ok(i) => self.terms[i].1,
            Err(_) => Complex::new(0.0, 0.0),
        }
    }

    fn lookup(&self, ket: &FockKet) -> Option<Complex> {
        self.terms
            .binary_search_by(|(k, _)| k.cmp(ket))
            .ok()
            .map(|i| self.terms[i].1)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.terms.iter().map(|(_, a)| a.norm_sqr()).sum()
    }

    pub fn normalized(&self) -> Result<Self, FockError> {
        let n2 = self.norm_sqr();
        if self.terms.is_empty() || n2 <= f64::MIN_POSITIVE {
            return Err(FockError::ZeroProbability);
        }
        let scale = 1.0 / n2.sqrt();
        let mut s = self.clone();
        for (_, a) in &mut s.terms {
            *a *= scale;
        }
        Ok(s)
    }

    /// Sort, merge duplicates, prune, and enforce the cutoff.
    fn canonicalize(&self, mut terms: Vec<(FockKet, Complex)>) -> Result<Vec<(FockKet, Complex)>, FockError> {
        terms.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        let mut out: Vec<(FockKet, Complex)> = Vec::with_capacity(terms.len());
        for (ket, amp) in terms {
            match out.last_mut() {
                Some((last, acc)) if *last == ket => *acc += amp,
                _ => out.push((ket, amp)),
            }
        }
        out.retain(|(_, a)| a.norm() >= self.prune);
        for (ket, _) in &out {
            if let Some(i) = ket.0.iter().position(|&n| n > self.cutoff) {
                return Err(FockError::CutoffExceeded {
                    mode: self.modes[i],
                    occupation: ket.0[i],
                    cutoff: self.cutoff,
                });
            }
        }
        Ok(out)
    }

    /// Product state; modes of `self` come first. The cutoff is the larger of the two.
    pub fn tensor(&self, other: &StateVector) -> Result<Self, FockError> {
        if let Some(&m) = self.modes.iter().find(|m| other.modes.contains(m)) {
            return Err(FockError::OverlappingModes(m));
        }
        let mut modes = self.modes.clone();
        modes.extend_from_slice(&other.modes);
        // Lexicographic order of the concatenation follows from the factors' order.
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        let prune = self.prune.max(other.prune);
        for (ka, aa) in &self.terms {
            for (kb, ab) in &other.terms {
                let amp = aa * ab;
                if amp.norm() >= prune {
                    terms.push((ka.concat(kb), amp));
                }
            }
        }
        Ok(StateVector {
            modes,
            cutoff: self.cutoff.max(other.cutoff),
            prune,
            terms,
        })
    }

    /// Apply a beam splitter to modes `m1`, `m2` (see module docs for the convention).
    pub fn beam_splitter(&self, m1: ModeId, m2: ModeId, bs: BeamSplitter) -> Result<Self, FockError> {
        if m1 == m2 {
            return Err(FockError::InvalidParameter(format!(
                "beam splitter needs two distinct modes, got {m1} twice"
            )));
        }
        let i1 = self.mode_index(m1)?;
        let i2 = self.mode_index(m2)?;
        let max_total = self
            .terms
            .iter()
            .map(|(k, _)| k.0[i1] as usize + k.0[i2] as usize)
            .max()
            .unwrap_or(0);
        if max_total <= DIRECT_SPLIT_MAX {
            return self.beam_splitter_direct(i1, i2, max_total, bs);
        }
        // Group terms by spectator occupations and total photon number on the
        // two modes; each group transforms by one dense block of the splitter.
        let mut keyed: Vec<(FockKet, u16, Complex)> = self
            .terms
            .iter()
            .map(|(ket, amp)| {
                let n1 = ket.0[i1];
                let mut key = ket.0.clone();
                key[i1] = n1 + ket.0[i2];
                key[i2] = 0;
                (FockKet(key), n1, *amp)
            })
            .collect();
        keyed.sort_unstable_by(|a, b| a.0.cmp(&b.0));

        let mut blocks: Vec<Option<Vec<Complex>>> = Vec::new();
        let mut out = Vec::with_capacity(self.terms.len() * 2);
        let mut start = 0;
        while start < keyed.len() {
            let mut end = start + 1;
            while end < keyed.len() && keyed[end].0 == keyed[start].0 {
                end += 1;
            }
            let key = &keyed[start].0;
            let total = key.0[i1] as usize;
            if total == 0 {
                out.push((keyed[start].0.clone(), keyed[start].2));
                start = end;
                continue;
            }
            if blocks.len() <= total {
                blocks.resize(total + 1, None);
            }
            let block = blocks[total].get_or_insert_with(|| splitter_block(total, bs));
            let dim = total + 1;
            for p in 0..dim {
                let mut acc = Complex::new(0.0, 0.0);
                for (_, n1, amp) in &keyed[start..end] {
                    acc += block[p * dim + *n1 as usize] * amp;
                }
                if acc.norm() >= self.prune {
                    let mut occ = key.0.clone();
                    occ[i1] = p as u16;
                    occ[i2] = (total - p) as u16;
                    out.push((FockKet(occ), acc));
                }
            }
            start = end;
        }
        let terms = self.canonicalize(out)?;
        Ok(StateVector {
            terms,
            ..self.clone_shell()
        })
    }

    /// Term-by-term expansion, cheaper than the block path when few photons meet.
    fn beam_splitter_direct(&self, i1: usize, i2: usize, max_total: usize, bs: BeamSplitter) -> Result<Self, FockError> {
        let blocks: Vec<Vec<Complex>> = (0..=max_total).map(|n| splitter_block(n, bs)).collect();
        let mut out = Vec::with_capacity(self.terms.len() * (max_total + 1));
        for (ket, amp) in &self.terms {
            let n1 = ket.0[i1] as usize;
            let total = n1 + ket.0[i2] as usize;
            let dim = total + 1;
            for p in 0..dim {
                let c = blocks[total][p * dim + n1] * amp;
                if c.norm() >= self.prune {
                    let mut occ = ket.0.clone();
                    occ[i1] = p as u16;
                    occ[i2] = (total - p) as u16;
                    out.push((FockKet(occ), c));
                }
            }
        }
        let terms = self.canonicalize(out)?;
        Ok(StateVector {
            terms,
            ..self.clone_shell()
        })
    }

    /// Multiply each term by `exp(i n φ)` where `n` is the occupation of `mode`.
    pub fn phase_shift(&self, mode: ModeId, phi: f64) -> Result<Self, FockError> {
        let i = self.mode_index(mode)?;
        let mut s = self.clone();
        for (ket, a) in &mut s.terms {
            *a *= Complex::from_polar(1.0, phi * ket.0[i] as f64);
        }
        Ok(s)
    }

    /// Rename a mode. Order of the mode list (and hence of terms) is unchanged.
    pub fn relabel(&self, from: ModeId, to: ModeId) -> Result<Self, FockError> {
        let i = self.mode_index(from)?;
        if from != to && self.modes.contains(&to) {
            return Err(FockError::OverlappingModes(to));
        }
        let mut s = self.clone();
        s.modes[i] = to;
        Ok(s)
    }

    pub fn relabel_all(&self, pairs: &[(ModeId, ModeId)]) -> Result<Self, FockError> {
        pairs
            .iter()
            .try_fold(self.clone(), |s, &(from, to)| s.relabel(from, to))
    }

    /// Born-rule probability that the modes in `pattern` show its occupations.
    pub fn probability(&self, pattern: &OutcomePattern) -> Result<f64, FockError> {
        let idx = self.mode_indices(&pattern.modes)?;
        Ok(self
            .terms
            .iter()
            .filter(|(k, _)| idx.iter().zip(&pattern.occupations).all(|(&i, &n)| k.0[i] == n))
            .map(|(_, a)| a.norm_sqr())
            .sum())
    }

    /// Keep only terms whose occupations on `modes` satisfy `accept`; no renormalization.
    pub fn project<F>(&self, modes: &[ModeId], accept: F) -> Result<Self, FockError>
    where
        F: Fn(&[u16]) -> bool,
    {
        let idx = self.mode_indices(modes)?;
        let mut buf: SmallVec<[u16; 8]> = SmallVec::with_capacity(idx.len());
        let mut s = self.clone_shell();
        s.terms = self
            .terms
            .iter()
            .filter(|(k, _)| {
                buf.clear();
                buf.extend(idx.iter().map(|&i| k.0[i]));
                accept(&buf)
            })
            .cloned()
            .collect();
        Ok(s)
    }

    /// Project onto the accepted subspace and renormalize.
    pub fn postselect<F>(&self, modes: &[ModeId], accept: F) -> Result<PostSelection, FockError>
    where
        F: Fn(&[u16]) -> bool,
    {
        let total = self.norm_sqr();
        let projected = self.project(modes, accept)?;
        let kept = projected.norm_sqr();
        if projected.is_empty() || kept <= f64::MIN_POSITIVE {
            return Ok(PostSelection::Empty);
        }
        Ok(PostSelection::Accepted {
            probability: kept / total,
            state: projected.normalized()?,
        })
    }

    /// Distribution of occupations on `modes`, sorted by pattern.
    pub fn marginal(&self, modes: &[ModeId]) -> Result<Vec<(Vec<u16>, f64)>, FockError> {
        let idx = self.mode_indices(modes)?;
        let mut rows: Vec<(Vec<u16>, f64)> = self
            .terms
            .iter()
            .map(|(k, a)| (idx.iter().map(|&i| k.0[i]).collect(), a.norm_sqr()))
            .collect();
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        let mut out: Vec<(Vec<u16>, f64)> = Vec::new();
        for (key, p) in rows {
            match out.last_mut() {
                Some((last, acc)) if *last == key => *acc += p,
                _ => out.push((key, p)),
            }
        }
        Ok(out)
    }

    /// Draw one full occupation pattern. The state must be normalized.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<OutcomePattern, FockError> {
        let n2 = self.norm_sqr();
        if (n2 - 1.0).abs() > 1e-9 {
            return Err(FockError::NotNormalized(n2));
        }
        let u: f64 = rng.gen::<f64>() * n2;
        let mut acc = 0.0;
        let mut chosen = &self.terms[self.terms.len() - 1].0;
        for (k, a) in &self.terms {
            acc += a.norm_sqr();
            if u < acc {
                chosen = k;
                break;
            }
        }
        Ok(OutcomePattern {
            modes: self.modes.clone(),
            occupations: chosen.0.to_vec(),
        })
    }

    pub fn mean_occupation(&self, mode: ModeId) -> Result<f64, FockError> {
        let i = self.mode_index(mode)?;
        Ok(self
            .terms
            .iter()
            .map(|(k, a)| k.0[i] as f64 * a.norm_sqr())
            .sum())
    }

    /// `⟨a†_{m1} a_{m2}⟩`.
    pub fn moment(&self, m1: ModeId, m2: ModeId) -> Result<Complex, FockError> {
        let i = self.mode_index(m1)?;
        let j = self.mode_index(m2)?;
        if i == j {
            return Ok(Complex::new(self.mean_occupation(m1)?, 0.0));
        }
        let mut acc = Complex::new(0.0, 0.0);
        for (ket, amp) in &self.terms {
            let nj = ket.0[j];
            if nj == 0 {
                continue;
            }
            let mut moved = ket.0.clone();
            moved[j] -= 1;
            moved[i] += 1;
            let target = FockKet(moved);
            if let Some(b) = self.lookup(&target) {
                let factor = (nj as f64 * target.0[i] as f64).sqrt();
                acc += b.conj() * amp * factor;
            }
        }
        Ok(acc)
    }

    /// Mean occupations of `m1` and `m2` after a beam splitter, evaluated in
    /// the Heisenberg picture from second moments of this state.
    pub fn beam_splitter_means(&self, m1: ModeId, m2: ModeId, bs: BeamSplitter) -> Result<(f64, f64), FockError> {
        let modes = [m1, m2];
        let mut g = [[Complex::new(0.0, 0.0); 2]; 2];
        for (k, &mk) in modes.iter().enumerate() {
            for (l, &ml) in modes.iter().enumerate() {
                g[k][l] = if k <= l {
                    self.moment(mk, ml)?
                } else {
                    g[l][k].conj()
                };
            }
        }
        let m = bs.matrix();
        let out = |row: usize| -> f64 {
            let mut acc = Complex::new(0.0, 0.0);
            for k in 0..2 {
                for l in 0..2 {
                    acc += m[row][k].conj() * m[row][l] * g[k][l];
                }
            }
            acc.re
        };
        Ok((out(0), out(1)))
    }

    /// Inner product `⟨self|other⟩`. Both states must share the same mode order.
    pub fn inner(&self, other: &StateVector) -> Result<Complex, FockError> {
        if self.modes != other.modes {
            return Err(FockError::InvalidParameter(
                "inner product needs identical mode lists".into(),
            ));
        }
        let mut acc = Complex::new(0.0, 0.0);
        let (mut i, mut j) = (0, 0);
        while i < self.terms.len() && j < other.terms.len() {
            match self.terms[i].0.cmp(&other.terms[j].0) {
                Ordering::Less => i += 1,
                Ordering::Greater => j += 1,
                Ordering::Equal => {
                    acc += self.terms[i].1.conj() * other.terms[j].1;
                    i += 1;
                    j += 1;
                }
            }
        }
        Ok(acc)
    }

    fn clone_shell(&self) -> StateVector {
        StateVector {
            modes: self.modes.clone(),
            cutoff: self.cutoff,
            prune: self.prune,
            terms: Vec::new(),
        }
    }
}

/// `U[p][n] = ⟨p, N−p| U |n, N−n⟩` for the two modes of a splitter, row-major.
fn splitter_block(total: usize, bs: BeamSplitter) -> Vec<Complex> {
    let t = bs.transmittivity();
    let r = Complex::new(0.0, bs.reflectivity());
    let t_pow: Vec<f64> = (0..=total).map(|j| t.powi(j as i32)).collect();
    let r_pow: Vec<Complex> = (0..=total).map(|j| r.powi(j as i32)).collect();
    let dim = total + 1;
    let mut u = vec![Complex::new(0.0, 0.0); dim * dim];
    for n in 0..=total {
        let m = total - n;
        let norm_in = ln_factorial(n) + ln_factorial(m);
        // (t a†₁ + r a†₂)ⁿ (t a†₂ + r a†₁)ᵐ |0⟩ / √(n! m!)
        for j in 0..=n {
            let cj = binomial(n, j) * t_pow[j];
            if cj == 0.0 {
                continue;
            }
            let fj = r_pow[n - j] * cj;
            for k in 0..=m {
                let ck = binomial(m, k) * t_pow[k];
                if ck == 0.0 {
                    continue;
                }
                let p = j + (m - k);
                let q = (n - j) + k;
                let mag = (0.5 * (ln_factorial(p) + ln_factorial(q) - norm_in)).exp();
                u[p * dim + n] += fj * r_pow[m - k] * (ck * mag);
            }
        }
    }
    u
}

fn check_distinct(modes: &[ModeId]) -> Result<(), FockError> {
    for (i, m) in modes.iter().enumerate() {
        if modes[..i].contains(m) {
            return Err(FockError::OverlappingModes(*m));
        }
    }
    Ok(())
}

/// Unnormalized-by-truncation coherent amplitudes `e^{-|α|²/2} αⁿ/√n!`, `n ≤ cutoff`.
pub fn coherent_amplitudes(alpha: Complex, cutoff: u16) -> Vec<Complex> {
    let mag2 = alpha.norm_sqr();
    (0..=cutoff as usize)
        .map(|n| {
            if n == 0 {
                return Complex::new((-mag2 / 2.0).exp(), 0.0);
            }
            if alpha.norm() == 0.0 {
                return Complex::new(0.0, 0.0);
            }
            let ln_mag = -mag2 / 2.0 + n as f64 * alpha.norm().ln() - 0.5 * ln_factorial(n);
            Complex::from_polar(ln_mag.exp(), n as f64 * alpha.arg())
        })
        .collect()
}

/// Poisson weights `e^{-|α|²} |α|^{2n}/n!`.
pub fn poisson_weight(mean: f64, n: usize) -> f64 {
    if mean == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    (-mean + n as f64 * mean.ln() - ln_factorial(n)).exp()
}

/// Probability weight of a coherent state above `cutoff` photons.
pub fn coherent_tail_weight(magnitude: f64, cutoff: u16) -> f64 {
    let mean = magnitude * magnitude;
    let mut tail = 0.0;
    let mut n = cutoff as usize + 1;
    loop {
        let w = poisson_weight(mean, n);
        tail += w;
        if (n as f64 > mean && w < 1e-18 * tail.max(1e-300)) || w == 0.0 || n >= 2 * MAX_CUTOFF as usize {
            break;
        }
        n += 1;
    }
    tail
}

/// Smallest cutoff whose discarded coherent tail is below `tolerance`.
pub fn coherent_cutoff(magnitude: f64, tolerance: f64) -> u16 {
    (1..=MAX_CUTOFF)
        .find(|&c| coherent_tail_weight(magnitude, c) <= tolerance)
        .unwrap_or(MAX_CUTOFF)
}

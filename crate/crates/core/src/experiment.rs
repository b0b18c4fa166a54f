//! Shot-by-shot CHSH protocol: random reference phases, random settings,
//! post-selected detection, delayed remainder readout, then binning in
//! `c = cos(Δφ + π/2)` and estimation of the four correlations and `S`.
//!
//! Every shot draws from its own ChaCha8 stream: the generator is seeded
//! with the master seed and switched to stream number `shot index`, so a
//! record depends only on `(config, seed, index)`. Within a shot the draws
//! are taken in a fixed order: Alice's setting, Bob's setting, reference
//! phases (continuous ensembles only), acceptance, pattern, readout.

use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};
use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytic::{
    principal_delta_phi, reduce_angle, scheme1_correlation, ErratumMode, Pattern, RemainderIntensities,
    CHSH_SIGNS, SETTING_PAIRS,
};
use crate::error::{Error, Result};
use crate::fock::{Complex, MAX_CUTOFF};
use crate::schemes::{
    remainder_means_from_moments, run_scheme1_with_references, run_scheme2_with_input, run_scheme3_exact,
    sample_remainder, scheme3_config, CircuitResult, PureReference, Readout, ReferenceSpec, Scheme3Options,
    Truncation, READOUT_PATHS,
};

pub const RECORDS_SCHEMA: &str = "fock-chsh records v1";
pub const ESTIMATES_SCHEMA: &str = "fock-chsh estimates v1";
pub const ESTIMATES_HEADER: &str =
    "bin_center_c,S,S_err,E_ab,E_ab_err,E_apb,E_apb_err,E_abp,E_abp_err,E_apbp,E_apbp_err,n_accepted,valid";
pub const RECORDS_HEADER: &str = "index,alice_rotated,bob_rotated,accepted,alice_sign,bob_sign,n15,n16,c,delta_phi";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Scheme {
    One,
    Two,
    Three,
}

impl TryFrom<u8> for Scheme {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Scheme::One),
            2 => Ok(Scheme::Two),
            3 => Ok(Scheme::Three),
            _ => Err(format!("scheme must be 1, 2 or 3, got {v}")),
        }
    }
}

impl From<Scheme> for u8 {
    fn from(s: Scheme) -> u8 {
        match s {
            Scheme::One => 1,
            Scheme::Two => 2,
            Scheme::Three => 3,
        }
    }
}

/// Variable the accepted records are binned in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinVariable {
    /// `c = cos(Δφ + π/2)` on `[-1, 1]`.
    #[default]
    C,
    /// Principal `Δφ = asin(−c)` on `[−π/2, π/2]`.
    DeltaPhi,
}

/// Reference-state family, shared by both parties.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceChoice {
    /// Fixed phases `phase_a`, `phase_b` on every shot.
    Coherent,
    /// Independent uniformly random phases on every shot.
    #[default]
    PhaseAveraged,
    /// `|N⟩` on both sides (Scheme 3 only).
    Number,
    /// Poisson mixture with mean `|α|²` on both sides (Scheme 3 only).
    Poisson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scheme: Scheme,
    pub xi_minus_eta: f64,
    pub eta: f64,
    pub reference: ReferenceChoice,
    /// Reference magnitude. Defaults: 1 (Scheme 1), √2 (Scheme 2 input, Scheme 3).
    pub alpha: Option<f64>,
    /// Photon number for `reference = number`.
    pub number: u16,
    /// Fixed reference phases (`reference = coherent`); Scheme 2 uses `phase_a` only.
    pub phase_a: f64,
    pub phase_b: f64,
    /// Reference Fock cutoff; chosen from the tail tolerance when absent.
    pub cutoff: Option<u16>,
    pub shots: u64,
    pub bins: usize,
    pub seed: u64,
    pub bin_variable: BinVariable,
    pub readout: Readout,
    pub erratum_mode: ErratumMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scheme: Scheme::Three,
            xi_minus_eta: 0.75 * PI,
            eta: 0.0,
            reference: ReferenceChoice::PhaseAveraged,
            alpha: None,
            number: 4,
            phase_a: 0.0,
            phase_b: FRAC_PI_2,
            cutoff: None,
            shots: 1_000_000,
            bins: 16,
            seed: 0,
            bin_variable: BinVariable::C,
            readout: Readout::Deterministic,
            erratum_mode: ErratumMode::Derived,
        }
    }
}

impl ExperimentConfig {
    pub fn xi(&self) -> f64 {
        self.eta + self.xi_minus_eta
    }

    pub fn alpha_or_default(&self) -> f64 {
        self.alpha.unwrap_or(match self.scheme {
            Scheme::One => 1.0,
            Scheme::Two | Scheme::Three => SQRT_2,
        })
    }

    /// Copy with every optional field filled in.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.alpha = Some(self.alpha_or_default());
        c.cutoff = Some(match self.scheme {
            Scheme::One | Scheme::Two => self.truncation().cutoff,
            Scheme::Three => self.cutoff.unwrap_or_else(|| self.reference_spec(0.0).cutoff),
        });
        c
    }

    fn truncation(&self) -> Truncation {
        match self.cutoff {
            Some(k) => Truncation::fixed(k),
            None => Truncation::for_magnitude(self.alpha_or_default()),
        }
    }

    fn reference_spec(&self, phase: f64) -> ReferenceSpec {
        let a = self.alpha_or_default();
        let spec = match self.reference {
            ReferenceChoice::Coherent => ReferenceSpec::coherent(a, phase),
            ReferenceChoice::PhaseAveraged => ReferenceSpec::phase_averaged(a),
            ReferenceChoice::Number => ReferenceSpec::number(self.number),
            ReferenceChoice::Poisson => ReferenceSpec::poisson(a),
        };
        match self.cutoff {
            Some(k) => spec.with_cutoff(k),
            None => spec,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.shots == 0 {
            return cfg("shots must be at least 1".into());
        }
        if self.bins == 0 {
            return cfg("bins must be at least 1".into());
        }
        if !self.xi_minus_eta.is_finite() || !self.eta.is_finite() {
            return cfg("measurement angles must be finite".into());
        }
        if !self.phase_a.is_finite() || !self.phase_b.is_finite() {
            return cfg("reference phases must be finite".into());
        }
        let alpha = self.alpha_or_default();
        if !alpha.is_finite() || alpha <= 0.0 {
            return cfg(format!("alpha must be positive, got {alpha}"));
        }
        if let Some(k) = self.cutoff {
            if k == 0 || k > MAX_CUTOFF {
                return cfg(format!("cutoff {k} outside 1..={MAX_CUTOFF}"));
            }
        }
        match self.scheme {
            Scheme::One | Scheme::Two => {
                if self.bins != 1 {
                    return cfg(format!(
                        "scheme {} has no phase readout; use --bins 1 (got {})",
                        u8::from(self.scheme),
                        self.bins
                    ));
                }
                if matches!(self.reference, ReferenceChoice::Number | ReferenceChoice::Poisson) {
                    return cfg("number and poisson references need scheme 3".into());
                }
                self.truncation();
                if let Some(k) = self.cutoff {
                    if k < 2 {
                        return cfg("schemes 1 and 2 need cutoff ≥ 2".into());
                    }
                }
            }
            Scheme::Three => {
                let spec = self.reference_spec(0.0);
                spec.validate()?;
                spec.skim_transmittivity()?;
                if matches!(self.reference, ReferenceChoice::Number | ReferenceChoice::Poisson)
                    && self.readout == Readout::Deterministic
                {
                    return cfg(
                        "number and poisson references need --readout sampled; mean counts of an \
                         unobserved photon-number component are not a per-shot observable"
                            .into(),
                    );
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShotRecord {
    pub index: u64,
    pub alice_rotated: bool,
    pub bob_rotated: bool,
    /// Detected pattern; `None` when the shot failed post-selection.
    pub pattern: Option<Pattern>,
    pub readout: Option<RemainderIntensities>,
    /// Estimated `c` from the readout ratio, clamped to `[-1, 1]`.
    pub c: Option<f64>,
    /// True `Δφ` in `[0, 2π)` when the ensemble has one.
    pub delta_phi: Option<f64>,
}

impl ShotRecord {
    pub fn accepted(&self) -> bool {
        self.pattern.is_some()
    }

    pub fn setting_index(&self) -> usize {
        crate::analytic::setting_index(self.alice_rotated, self.bob_rotated)
    }

    /// `(alice_sign, bob_sign)`, zero when rejected.
    pub fn signs(&self) -> (i8, i8) {
        self.pattern.map_or((0, 0), |p| (p.alice_sign(), p.bob_sign()))
    }
}

/// Accepted-event distribution for a discrete ensemble at one setting pair.
#[derive(Clone, Debug)]
struct SettingTable {
    acceptance: f64,
    branches: Vec<Branch>,
    cdf: Vec<f64>,
}

#[derive(Clone, Debug)]
struct Branch {
    pattern: Pattern,
    delta_phi: Option<f64>,
    readout: Option<ReadoutTable>,
}

#[derive(Clone, Debug)]
struct ReadoutTable {
    means: RemainderIntensities,
    counts: Vec<(u16, u16)>,
    cdf: Vec<f64>,
}

impl ReadoutTable {
    fn build(run: &CircuitResult, pattern: Pattern) -> Result<Self> {
        let out = run.after_readout_splitter(Some(pattern))?;
        let rows = out.marginal(&READOUT_PATHS)?;
        let mut counts = Vec::with_capacity(rows.len());
        let mut cdf = Vec::with_capacity(rows.len());
        let mut acc = 0.0;
        let (mut n15, mut n16) = (0.0, 0.0);
        for (occ, p) in rows {
            acc += p;
            n15 += occ[0] as f64 * p;
            n16 += occ[1] as f64 * p;
            counts.push((occ[0], occ[1]));
            cdf.push(acc);
        }
        Ok(ReadoutTable {
            means: RemainderIntensities { n15, n16 },
            counts,
            cdf,
        })
    }

    fn draw<R: Rng>(&self, readout: Readout, rng: &mut R) -> RemainderIntensities {
        match readout {
            Readout::Deterministic => self.means,
            Readout::Sampled => {
                let (n15, n16) = self.counts[pick(&self.cdf, rng.gen())];
                RemainderIntensities {
                    n15: n15 as f64,
                    n16: n16 as f64,
                }
            }
        }
    }
}

fn pick(cdf: &[f64], u: f64) -> usize {
    let total = *cdf.last().unwrap_or(&1.0);
    let x = u * total;
    cdf.partition_point(|&v| v <= x).min(cdf.len() - 1)
}

/// Precomputed or per-shot evaluation strategy.
enum Engine {
    /// Finite ensemble of pure components: exact tables per setting pair.
    Table(Vec<SettingTable>),
    /// Continuous phase ensemble: one exact circuit run per accepted shot.
    /// The acceptance probability does not depend on the reference phases
    /// (phase shifts commute with the photon-number projection) nor on the
    /// settings (post-selection happens before BS2 and BS3), so it is
    /// computed once.
    PerShot { acceptance: f64 },
}

pub struct Experiment {
    cfg: ExperimentConfig,
    engine: Engine,
}

impl Experiment {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let cfg = cfg.resolved();
        let engine = match cfg.reference {
            ReferenceChoice::PhaseAveraged => {
                let acceptance = run_pure(&cfg, false, false, 0.0, 0.0)?.acceptance;
                Engine::PerShot { acceptance }
            }
            _ => Engine::Table(
                SETTING_PAIRS
                    .iter()
                    .map(|&(a, b)| build_table(&cfg, a, b))
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(Experiment { cfg, engine })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Exact post-selection probability, averaged over settings.
    pub fn acceptance(&self) -> f64 {
        match &self.engine {
            Engine::PerShot { acceptance } => *acceptance,
            Engine::Table(t) => t.iter().map(|s| s.acceptance).sum::<f64>() / t.len() as f64,
        }
    }

    pub fn shot(&self, index: u64) -> Result<ShotRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(index);
        let alice_rotated: bool = rng.gen();
        let bob_rotated: bool = rng.gen();
        let mut rec = ShotRecord {
            index,
            alice_rotated,
            bob_rotated,
            pattern: None,
            readout: None,
            c: None,
            delta_phi: None,
        };
        match &self.engine {
            Engine::PerShot { acceptance } => {
                let phi_a = 2.0 * PI * rng.gen::<f64>();
                let phi_b = match self.cfg.scheme {
                    Scheme::Two => phi_a,
                    _ => 2.0 * PI * rng.gen::<f64>(),
                };
                rec.delta_phi = Some(match self.cfg.scheme {
                    Scheme::Two => FRAC_PI_2,
                    _ => reduce_angle(phi_b - phi_a),
                });
                if rng.gen::<f64>() >= *acceptance {
                    return Ok(rec);
                }
                let run = run_pure(&self.cfg, alice_rotated, bob_rotated, phi_a, phi_b)?;
                let probs: Vec<f64> = Pattern::ALL.iter().map(|&p| run.conditional.get(p)).collect();
                let cdf: Vec<f64> = probs
                    .iter()
                    .scan(0.0, |s, p| {
                        *s += p;
                        Some(*s)
                    })
                    .collect();
                let pattern = Pattern::ALL[pick(&cdf, rng.gen())];
                rec.pattern = Some(pattern);
                if self.cfg.scheme == Scheme::Three {
                    let r = match self.cfg.readout {
                        Readout::Deterministic => remainder_means_from_moments(&run, Some(pattern))?,
                        Readout::Sampled => {
                            let (n15, n16) = sample_remainder(&run, Some(pattern), &mut rng)?;
                            RemainderIntensities {
                                n15: n15 as f64,
                                n16: n16 as f64,
                            }
                        }
                    };
                    self.set_readout(&mut rec, r)?;
                }
            }
            Engine::Table(tables) => {
                let t = &tables[rec.setting_index()];
                if rng.gen::<f64>() >= t.acceptance {
                    return Ok(rec);
                }
                let b = &t.branches[pick(&t.cdf, rng.gen())];
                rec.pattern = Some(b.pattern);
                rec.delta_phi = b.delta_phi;
                if let Some(table) = &b.readout {
                    let r = table.draw(self.cfg.readout, &mut rng);
                    self.set_readout(&mut rec, r)?;
                }
            }
        }
        Ok(rec)
    }

    fn set_readout(&self, rec: &mut ShotRecord, r: RemainderIntensities) -> Result<()> {
        rec.readout = Some(r);
        rec.c = match r.ratio() {
            Some(ratio) => Some(self.cfg.erratum_mode.c_from_ratio(ratio)?),
            None => None,
        };
        Ok(())
    }

    pub fn run(&self) -> Result<Vec<ShotRecord>> {
        (0..self.cfg.shots).into_par_iter().map(|i| self.shot(i)).collect()
    }

    pub fn run_sequential(&self) -> Result<Vec<ShotRecord>> {
        (0..self.cfg.shots).map(|i| self.shot(i)).collect()
    }
}

fn settings(cfg: &ExperimentConfig, alice_rotated: bool, bob_rotated: bool) -> (f64, f64) {
    let xi = cfg.xi() + if alice_rotated { FRAC_PI_2 } else { 0.0 };
    let eta = cfg.eta + if bob_rotated { FRAC_PI_2 } else { 0.0 };
    (xi, eta)
}

/// One exact run with coherent references of the given phases.
fn run_pure(cfg: &ExperimentConfig, ar: bool, br: bool, phi_a: f64, phi_b: f64) -> Result<CircuitResult> {
    let (xi, eta) = settings(cfg, ar, br);
    let a = cfg.alpha_or_default();
    match cfg.scheme {
        Scheme::One => run_scheme1_with_references(
            xi,
            eta,
            Complex::from_polar(a, phi_a),
            Complex::from_polar(a, phi_b),
            cfg.truncation(),
        ),
        Scheme::Two => run_scheme2_with_input(xi, eta, Complex::from_polar(a, phi_a), cfg.truncation()),
        Scheme::Three => {
            let spec = cfg.reference_spec(0.0);
            let pc = scheme3_config(
                PureReference::Coherent(Complex::from_polar(a, phi_a)),
                PureReference::Coherent(Complex::from_polar(a, phi_b)),
                &spec,
                &spec,
                crate::fock::DEFAULT_TAIL_TOLERANCE,
            )?;
            crate::schemes::run_scheme3_pure(xi, eta, &pc)
        }
    }
}

fn build_table(cfg: &ExperimentConfig, ar: bool, br: bool) -> Result<SettingTable> {
    let mut branches = Vec::new();
    let mut weights = Vec::new();
    let acceptance;
    match cfg.scheme {
        Scheme::One | Scheme::Two => {
            let run = run_pure(cfg, ar, br, cfg.phase_a, cfg.phase_b)?;
            acceptance = run.acceptance;
            let dphi = match cfg.scheme {
                Scheme::Two => FRAC_PI_2,
                _ => reduce_angle(cfg.phase_b - cfg.phase_a),
            };
            for p in Pattern::ALL {
                branches.push(Branch {
                    pattern: p,
                    delta_phi: Some(dphi),
                    readout: None,
                });
                weights.push(run.conditional.get(p));
            }
        }
        Scheme::Three => {
            let (xi, eta) = settings(cfg, ar, br);
            let ra = cfg.reference_spec(cfg.phase_a);
            let rb = cfg.reference_spec(cfg.phase_b);
            let res = run_scheme3_exact(xi, eta, &ra, &rb, &Scheme3Options::default())?;
            acceptance = res.acceptance;
            for comp in &res.components {
                let dphi = match (comp.alice, comp.bob) {
                    (PureReference::Coherent(a), PureReference::Coherent(b)) => Some(reduce_angle(b.arg() - a.arg())),
                    _ => None,
                };
                for p in Pattern::ALL {
                    let w = comp.weight * comp.run.acceptance * comp.run.conditional.get(p);
                    if w <= 0.0 {
                        continue;
                    }
                    branches.push(Branch {
                        pattern: p,
                        delta_phi: dphi,
                        readout: Some(ReadoutTable::build(&comp.run, p)?),
                    });
                    weights.push(w);
                }
            }
        }
    }
    let cdf = weights
        .iter()
        .scan(0.0, |s, w| {
            *s += w;
            Some(*s)
        })
        .collect();
    Ok(SettingTable {
        acceptance,
        branches,
        cdf,
    })
}

/// Run the configured experiment in parallel; identical to sequential evaluation.
pub fn run_chsh_experiment(cfg: &ExperimentConfig) -> Result<Vec<ShotRecord>> {
    Experiment::new(cfg)?.run()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CellEstimate {
    pub n: u64,
    pub n_same: u64,
    pub e: f64,
    pub e_err: f64,
    /// Mean estimated `c` over the cell's records (NaN when empty or unknown).
    pub mean_c: f64,
    /// Alice's `+1` count, for no-signalling checks.
    pub alice_plus: u64,
}

impl CellEstimate {
    fn finish(mut self, c_sum: f64, c_n: u64) -> Self {
        if self.n > 0 {
            let n = self.n as f64;
            let n_diff = self.n - self.n_same;
            self.e = (self.n_same as f64 - n_diff as f64) / n;
            self.e_err = ((1.0 - self.e * self.e) / n).max(0.0).sqrt();
        } else {
            self.e = f64::NAN;
            self.e_err = f64::NAN;
        }
        self.mean_c = if c_n > 0 { c_sum / c_n as f64 } else { f64::NAN };
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedEstimate {
    pub lo: f64,
    pub hi: f64,
    /// Bin midpoint expressed as `c`; `None` for the single unbinned estimate.
    pub center_c: Option<f64>,
    /// Principal-branch `Δφ` of the midpoint.
    pub center_delta_phi: Option<f64>,
    /// Cells in setting order ab, a'b, ab', a'b'.
    pub cells: [CellEstimate; 4],
    pub s: f64,
    pub s_err: f64,
    pub n_accepted: u64,
    /// All four setting cells are nonempty.
    pub valid: bool,
}

impl BinnedEstimate {
    fn from_cells(lo: f64, hi: f64, center_c: Option<f64>, cells: [CellEstimate; 4]) -> Self {
        let valid = cells.iter().all(|c| c.n > 0);
        let n_accepted = cells.iter().map(|c| c.n).sum();
        let (s, s_err) = if valid {
            let sum: f64 = cells.iter().zip(CHSH_SIGNS).map(|(c, k)| k * c.e).sum();
            let var: f64 = cells.iter().map(|c| c.e_err * c.e_err).sum();
            (sum.abs(), var.sqrt())
        } else {
            (f64::NAN, f64::NAN)
        };
        BinnedEstimate {
            lo,
            hi,
            center_c,
            center_delta_phi: center_c.map(principal_delta_phi),
            cells,
            s,
            s_err,
            n_accepted,
            valid,
        }
    }

    pub fn correlations(&self) -> [f64; 4] {
        [self.cells[0].e, self.cells[1].e, self.cells[2].e, self.cells[3].e]
    }

    /// Mean estimated `c` over all records in the bin.
    pub fn mean_c(&self) -> f64 {
        let (mut s, mut n) = (0.0, 0.0);
        for c in &self.cells {
            if c.mean_c.is_finite() {
                s += c.mean_c * c.n as f64;
                n += c.n as f64;
            }
        }
        if n > 0.0 {
            s / n
        } else {
            f64::NAN
        }
    }

    /// Expected `S` given the records' `c` values: each cell's correlation is
    /// linear in `c`, so evaluating it at the cell's mean `c` is exact.
    pub fn oracle_s(&self, xi: f64, eta: f64) -> f64 {
        let mut sum = 0.0;
        for ((ar, br), (cell, k)) in SETTING_PAIRS.iter().zip(self.cells.iter().zip(CHSH_SIGNS)) {
            let a = xi + if *ar { FRAC_PI_2 } else { 0.0 };
            let b = eta + if *br { FRAC_PI_2 } else { 0.0 };
            sum += k * scheme1_correlation(a, b, principal_delta_phi(cell.mean_c));
        }
        sum.abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinningReport {
    pub bins: Vec<BinnedEstimate>,
    pub bin_variable: BinVariable,
    pub n_shots: u64,
    pub n_accepted: u64,
    /// Accepted records left out because their readout gave no phase estimate.
    pub n_without_c: u64,
}

fn tally(records: &[&ShotRecord]) -> [CellEstimate; 4] {
    let mut cells = [CellEstimate::default(); 4];
    let mut csum = [0.0; 4];
    let mut cn = [0u64; 4];
    for r in records {
        let Some(p) = r.pattern else { continue };
        let k = r.setting_index();
        cells[k].n += 1;
        if p.alice_sign() == p.bob_sign() {
            cells[k].n_same += 1;
        }
        if p.alice_sign() > 0 {
            cells[k].alice_plus += 1;
        }
        if let Some(c) = r.c {
            csum[k] += c;
            cn[k] += 1;
        }
    }
    let mut out = [CellEstimate::default(); 4];
    for k in 0..4 {
        out[k] = cells[k].finish(csum[k], cn[k]);
    }
    out
}

/// Partition accepted records into `bins` uniform bins of the chosen variable
/// and estimate the correlations and `S` in each. With one bin every accepted
/// record is used, whether or not it carries a phase estimate.
pub fn bin_and_estimate(records: &[ShotRecord], bins: usize, variable: BinVariable) -> Result<BinningReport> {
    if bins == 0 {
        return Err(Error::Config("bins must be at least 1".into()));
    }
    let accepted: Vec<&ShotRecord> = records.iter().filter(|r| r.accepted()).collect();
    if accepted.is_empty() {
        return Err(Error::NoAcceptedRecords);
    }
    let report = |bins, n_without_c| BinningReport {
        bins,
        bin_variable: variable,
        n_shots: records.len() as u64,
        n_accepted: accepted.len() as u64,
        n_without_c,
    };
    if bins == 1 && accepted.iter().any(|r| r.c.is_none()) {
        let est = BinnedEstimate::from_cells(-1.0, 1.0, None, tally(&accepted));
        return Ok(report(vec![est], 0));
    }
    let (lo, hi) = match variable {
        BinVariable::C => (-1.0, 1.0),
        BinVariable::DeltaPhi => (-FRAC_PI_2, FRAC_PI_2),
    };
    let width = (hi - lo) / bins as f64;
    let mut buckets: Vec<Vec<&ShotRecord>> = vec![Vec::new(); bins];
    let mut n_without_c = 0;
    for r in &accepted {
        let Some(c) = r.c else {
            n_without_c += 1;
            continue;
        };
        let x = match variable {
            BinVariable::C => c,
            BinVariable::DeltaPhi => principal_delta_phi(c),
        };
        let k = (((x - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
        buckets[k].push(r);
    }
    let out = buckets
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let a = lo + k as f64 * width;
            let z = a + width;
            let mid = 0.5 * (a + z);
            let center_c = match variable {
                BinVariable::C => mid,
                BinVariable::DeltaPhi => (mid + FRAC_PI_2).cos(),
            };
            BinnedEstimate::from_cells(a, z, Some(center_c), tally(b))
        })
        .collect();
    Ok(report(out, n_without_c))
}

/// Single-bin estimate that ignores any phase readout.
pub fn phase_average_estimate(records: &[ShotRecord]) -> Result<(f64, f64)> {
    let accepted: Vec<&ShotRecord> = records.iter().filter(|r| r.accepted()).collect();
    if accepted.is_empty() {
        return Err(Error::NoAcceptedRecords);
    }
    let est = BinnedEstimate::from_cells(-1.0, 1.0, None, tally(&accepted));
    if !est.valid {
        return Err(Error::Domain("a setting pair has no accepted records".into()));
    }
    Ok((est.s, est.s_err))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or(String::new(), fmt_f64)
}

fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.17e}")
    }
}

pub fn records_csv(records: &[ShotRecord]) -> String {
    let mut out = format!("# {RECORDS_SCHEMA}\n{RECORDS_HEADER}\n");
    for r in records {
        let (a, b) = r.signs();
        let (n15, n16) = r.readout.map_or((None, None), |x| (Some(x.n15), Some(x.n16)));
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.index,
            r.alice_rotated as u8,
            r.bob_rotated as u8,
            r.accepted() as u8,
            a,
            b,
            fmt_opt(n15),
            fmt_opt(n16),
            fmt_opt(r.c),
            fmt_opt(r.delta_phi),
        );
    }
    out
}

pub fn estimates_csv(report: &BinningReport) -> String {
    let mut out = format!("# {ESTIMATES_SCHEMA}\n{ESTIMATES_HEADER}\n");
    for b in &report.bins {
        let _ = write!(out, "{},{},{}", fmt_opt(b.center_c), fmt_f64(b.s), fmt_f64(b.s_err));
        for c in &b.cells {
            let _ = write!(out, ",{},{}", fmt_f64(c.e), fmt_f64(c.e_err));
        }
        let _ = writeln!(out, ",{},{}", b.n_accepted, b.valid);
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{s_scheme1_phase_averaged, s_scheme2};

    fn cfg(scheme: Scheme, shots: u64) -> ExperimentConfig {
        ExperimentConfig {
            scheme,
            shots,
            bins: if scheme == Scheme::Three { 16 } else { 1 },
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn config_checks() {
        let mut c = cfg(Scheme::One, 10);
        c.bins = 4;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = cfg(Scheme::Three, 10);
        c.reference = ReferenceChoice::Number;
        assert!(c.validate().is_err());
        c.readout = Readout::Sampled;
        c.validate().unwrap();
        c.shots = 0;
        assert!(c.validate().is_err());
        let mut c = cfg(Scheme::Three, 10);
        c.alpha = Some(0.9);
        assert!(c.validate().is_err());
        let mut c = cfg(Scheme::Two, 10);
        c.reference = ReferenceChoice::Poisson;
        assert!(c.validate().is_err());
    }

    #[test]
    fn scheme_serde_roundtrip() {
        let c = cfg(Scheme::Two, 5).resolved();
        let t = toml::to_string(&c).unwrap();
        assert!(t.contains("scheme = 2"));
        let back: ExperimentConfig = toml::from_str(&t).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn parallel_equals_sequential() {
        let e = Experiment::new(&cfg(Scheme::Three, 3000)).unwrap();
        let a = e.run().unwrap();
        let b = e.run_sequential().unwrap();
        assert_eq!(records_csv(&a), records_csv(&b));
        // a single shot does not depend on what ran before it
        assert_eq!(e.shot(1234).unwrap(), a[1234]);
    }

    #[test]
    fn acceptance_is_phase_and_setting_independent() {
        let c = cfg(Scheme::Three, 1).resolved();
        let base = run_pure(&c, false, false, 0.0, 0.0).unwrap().acceptance;
        for (ar, br, pa, pb) in [(true, false, 1.0, 2.5), (false, true, 4.0, 0.3), (true, true, 5.9, 5.8)] {
            let a = run_pure(&c, ar, br, pa, pb).unwrap().acceptance;
            assert!((a - base).abs() < 1e-13);
        }
        assert!((base - (-2.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn scheme2_single_bin() {
        let recs = run_chsh_experiment(&cfg(Scheme::Two, 20_000)).unwrap();
        let (s, err) = phase_average_estimate(&recs).unwrap();
        assert!((s - s_scheme2(0.75 * PI)).abs() < 3.0 * err, "{s} ± {err}");
        let rep = bin_and_estimate(&recs, 1, BinVariable::C).unwrap();
        assert_eq!(rep.bins.len(), 1);
        assert_eq!(rep.bins[0].s, s);
    }

    #[test]
    fn scheme1_washout() {
        let recs = run_chsh_experiment(&cfg(Scheme::One, 20_000)).unwrap();
        let (s, err) = phase_average_estimate(&recs).unwrap();
        assert!((s - s_scheme1_phase_averaged(0.75 * PI)).abs() < 3.0 * err, "{s} ± {err}");
    }

    #[test]
    fn binning_edges_and_flags() {
        let mk = |i: u64, c: Option<f64>, p: Option<Pattern>, ar: bool, br: bool| ShotRecord {
            index: i,
            alice_rotated: ar,
            bob_rotated: br,
            pattern: p,
            readout: None,
            c,
            delta_phi: None,
        };
        let recs = vec![
            mk(0, Some(-1.0), Some(Pattern::P1010), false, false),
            mk(1, Some(1.0), Some(Pattern::P1001), true, false),
            mk(2, None, Some(Pattern::P0101), false, true),
            mk(3, None, None, true, true),
        ];
        let rep = bin_and_estimate(&recs, 2, BinVariable::C).unwrap();
        assert_eq!(rep.n_accepted, 3);
        assert_eq!(rep.n_without_c, 1);
        assert_eq!(rep.bins[0].n_accepted, 1);
        assert_eq!(rep.bins[1].n_accepted, 1);
        assert!(!rep.bins[0].valid && rep.bins[0].s.is_nan());
        assert_eq!(rep.bins[0].cells[0].e, 1.0);
        assert_eq!(rep.bins[1].cells[1].e, -1.0);
        assert!(matches!(
            bin_and_estimate(&recs[3..], 2, BinVariable::C),
            Err(Error::NoAcceptedRecords)
        ));
    }

    #[test]
    fn csv_layout() {
        let recs = run_chsh_experiment(&cfg(Scheme::Three, 200)).unwrap();
        let csv = records_csv(&recs);
        let mut lines = csv.lines();
        assert!(lines.next().unwrap().starts_with("# fock-chsh records"));
        assert_eq!(lines.next().unwrap(), RECORDS_HEADER);
        assert_eq!(lines.count(), 200);
        let rep = bin_and_estimate(&recs, 4, BinVariable::DeltaPhi).unwrap();
        let est = estimates_csv(&rep);
        assert_eq!(est.lines().nth(1).unwrap(), ESTIMATES_HEADER);
        assert_eq!(est.lines().count(), 6);
    }
}

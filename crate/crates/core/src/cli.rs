//! `fock-chsh` command line: `curve`, `simulate` and `verify`.
//!
//! Exit status is 0 on success, 1 when a check fails or a run hits a
//! numerical error, and 2 for usage, configuration and I/O problems.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analytic::{principal_delta_phi, s_scheme1, s_scheme2, ErratumMode};
use crate::angle::parse_angle;
use crate::error::{Error, Result};
use crate::experiment::{
    bin_and_estimate, estimates_csv, records_csv, sha256_hex, BinVariable, BinningReport, Experiment,
    ExperimentConfig, ReferenceChoice, Scheme,
};
use crate::schemes::Readout;
use crate::verify::{run_all, CheckResult, VerifyOptions};

/// Default output directory for files whose path is not given.
pub const OUT_DIR_ENV: &str = "FOCK_CHSH_OUT_DIR";
pub const CURVE_SCHEMA: &str = "fock-chsh curve v1";
pub const CURVE_HEADER: &str = "delta_phi,c,S_analytic";
pub const VERIFY_HEADER: &str = "check,deviation,tolerance,verdict";

#[derive(Parser, Debug)]
#[command(name = "fock-chsh", version, about = "Single-photon CHSH tests with independent reference beams")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Closed-form S as a function of the reference phase difference.
    Curve(CurveArgs),
    /// Monte Carlo CHSH experiment with binned estimates.
    Simulate(SimulateArgs),
    /// Cross-check the simulator against closed forms.
    Verify(VerifyArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug)]
pub struct CurveArgs {
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub scheme: u8,
    #[arg(long, default_value = "0.75pi", value_parser = angle_arg)]
    pub xi_minus_eta: f64,
    /// Uniform grid size on [0, 2π).
    #[arg(long, default_value_t = 1000)]
    pub points: usize,
    /// Explicit comma-separated Δφ values; overrides `--points`.
    #[arg(long, value_delimiter = ',', value_parser = angle_arg)]
    pub delta_phi: Vec<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReadoutArg {
    Deterministic,
    Sampled,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum BinVariableArg {
    C,
    DeltaPhi,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ErratumArg {
    Derived,
    Printed,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReferenceArg {
    Coherent,
    PhaseAveraged,
    Number,
    Poisson,
}

#[derive(Args, Debug, Default)]
pub struct SimulateArgs {
    /// TOML file with experiment keys (flags override it), or a manifest JSON from an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub scheme: Option<u8>,
    #[arg(long, value_parser = angle_arg)]
    pub xi_minus_eta: Option<f64>,
    #[arg(long, value_parser = angle_arg)]
    pub eta: Option<f64>,
    #[arg(long, value_enum)]
    pub reference: Option<ReferenceArg>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Photon number for `--reference number`.
    #[arg(long)]
    pub number: Option<u16>,
    #[arg(long, value_parser = angle_arg)]
    pub phase_a: Option<f64>,
    #[arg(long, value_parser = angle_arg)]
    pub phase_b: Option<f64>,
    #[arg(long)]
    pub cutoff: Option<u16>,
    #[arg(long)]
    pub shots: Option<u64>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub bin_variable: Option<BinVariableArg>,
    #[arg(long, value_enum)]
    pub readout: Option<ReadoutArg>,
    #[arg(long, value_enum)]
    pub erratum_mode: Option<ErratumArg>,
    #[arg(long)]
    pub records_out: Option<PathBuf>,
    #[arg(long)]
    pub estimates_out: Option<PathBuf>,
    /// Defaults to `<estimates>.manifest.json` next to the estimates file.
    #[arg(long)]
    pub manifest_out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 1e-10)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub representation_tolerance: f64,
    #[arg(long, default_value_t = 3.0)]
    pub sigmas: f64,
    /// Monte Carlo shots per statistical check; 0 skips them.
    #[arg(long, default_value_t = 100_000)]
    pub shots: u64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub quadrature: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
}

fn angle_arg(s: &str) -> std::result::Result<f64, String> {
    parse_angle(s).map_err(|e| e.to_string())
}

/// Everything needed to reproduce a `simulate` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub timestamp_unix: u64,
    pub erratum_mode: ErratumMode,
    /// How bin centres map back to a phase difference.
    pub delta_phi_branch: String,
    pub acceptance_exact: f64,
    pub n_shots: u64,
    pub n_accepted: u64,
    pub n_without_c: u64,
    pub estimates_sha256: String,
    pub records_sha256: Option<String>,
    /// Hash of the resolved config and the estimates; excludes the timestamp.
    pub reproducibility_hash: String,
}

#[derive(Serialize)]
struct CurveRow {
    delta_phi: f64,
    c: f64,
    #[serde(rename = "S_analytic")]
    s_analytic: f64,
}

/// Parse arguments, run, and return the process exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Io { .. } => 2,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Curve(a) => cmd_curve(&a).map(|_| 0),
        Command::Simulate(a) => cmd_simulate(&a).map(|_| 0),
        Command::Verify(a) => {
            let results = cmd_verify(&a)?;
            Ok(if results.iter().all(|r| r.passed) { 0 } else { 1 })
        }
    }
}

fn default_out(name: &str) -> Option<PathBuf> {
    std::env::var_os(OUT_DIR_ENV).map(|d| PathBuf::from(d).join(name))
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|source| Error::Io {
                    path: dir.display().to_string(),
                    source,
                })?;
            }
            fs::write(p, text).map_err(|source| Error::Io {
                path: p.display().to_string(),
                source,
            })
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable value");
    s.push('\n');
    s
}

pub fn curve_rows(scheme: u8, xi_minus_eta: f64, grid: &[f64]) -> Vec<(f64, f64, f64)> {
    grid.iter()
        .map(|&d| {
            let s = match scheme {
                2 => s_scheme2(xi_minus_eta),
                _ => s_scheme1(xi_minus_eta, d),
            };
            (d, (d + FRAC_PI_2).cos(), s)
        })
        .collect()
}

pub fn cmd_curve(a: &CurveArgs) -> Result<()> {
    let grid: Vec<f64> = if a.delta_phi.is_empty() {
        if a.points == 0 {
            return Err(Error::Config("--points must be at least 1".into()));
        }
        (0..a.points).map(|k| 2.0 * PI * k as f64 / a.points as f64).collect()
    } else {
        a.delta_phi.clone()
    };
    let rows = curve_rows(a.scheme, a.xi_minus_eta, &grid);
    let text = match a.format {
        Format::Csv => {
            let mut s = format!("# {CURVE_SCHEMA}\n{CURVE_HEADER}\n");
            for (d, c, v) in rows {
                s.push_str(&format!("{d:.17e},{c:.17e},{v:.17e}\n"));
            }
            s
        }
        Format::Json => to_json(
            &rows
                .iter()
                .map(|&(delta_phi, c, s_analytic)| CurveRow {
                    delta_phi,
                    c,
                    s_analytic,
                })
                .collect::<Vec<_>>(),
        ),
    };
    let path = a.out.clone().or_else(|| default_out("curve.csv"));
    write_out(path.as_deref(), &text)
}

fn read_text(p: &Path) -> Result<String> {
    fs::read_to_string(p).map_err(|source| Error::Io {
        path: p.display().to_string(),
        source,
    })
}

/// Output-related keys allowed in a TOML config next to the experiment keys.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputKeys {
    records_out: Option<PathBuf>,
    estimates_out: Option<PathBuf>,
    manifest_out: Option<PathBuf>,
    format: Option<Format>,
}

const OUTPUT_KEYS: [&str; 4] = ["records_out", "estimates_out", "manifest_out", "format"];
const ANGLE_KEYS: [&str; 4] = ["xi_minus_eta", "eta", "phase_a", "phase_b"];

fn load_config(p: &Path) -> Result<(ExperimentConfig, OutputKeys)> {
    let text = read_text(p)?;
    let bad = |e: String| Error::Config(format!("{}: {e}", p.display()));
    if p.extension().is_some_and(|e| e == "json") {
        let m: RunManifest = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        return Ok((m.config, OutputKeys::default()));
    }
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| bad(e.to_string()))?;
    let mut out = toml::Table::new();
    for k in OUTPUT_KEYS {
        if let Some(v) = table.remove(k) {
            out.insert(k.into(), v);
        }
    }
    // angles may be written as in the flags, e.g. "0.75pi"
    for k in ANGLE_KEYS {
        if let Some(toml::Value::String(s)) = table.get(k) {
            let v = parse_angle(s)?;
            table.insert(k.into(), toml::Value::Float(v));
        }
    }
    let cfg: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| bad(e.to_string()))?;
    let keys: OutputKeys = toml::Value::Table(out)
        .try_into()
        .map_err(|e: toml::de::Error| bad(e.to_string()))?;
    Ok((cfg, keys))
}

/// Resolve flags on top of an optional config file.
pub fn resolve_simulate(a: &SimulateArgs) -> Result<(ExperimentConfig, SimulateOutputs)> {
    let (mut cfg, keys) = match &a.config {
        Some(p) => load_config(p)?,
        None => (ExperimentConfig::default(), OutputKeys::default()),
    };
    if let Some(s) = a.scheme {
        cfg.scheme = Scheme::try_from(s).map_err(Error::Config)?;
        if a.bins.is_none() && a.config.is_none() && cfg.scheme != Scheme::Three {
            cfg.bins = 1;
        }
    }
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = a.$field {
                cfg.$field = v;
            }
        };
    }
    set!(xi_minus_eta);
    set!(eta);
    set!(number);
    set!(phase_a);
    set!(phase_b);
    set!(shots);
    set!(bins);
    set!(seed);
    if a.alpha.is_some() {
        cfg.alpha = a.alpha;
    }
    if a.cutoff.is_some() {
        cfg.cutoff = a.cutoff;
    }
    if let Some(r) = a.reference {
        cfg.reference = match r {
            ReferenceArg::Coherent => ReferenceChoice::Coherent,
            ReferenceArg::PhaseAveraged => ReferenceChoice::PhaseAveraged,
            ReferenceArg::Number => ReferenceChoice::Number,
            ReferenceArg::Poisson => ReferenceChoice::Poisson,
        };
    }
    if let Some(b) = a.bin_variable {
        cfg.bin_variable = match b {
            BinVariableArg::C => BinVariable::C,
            BinVariableArg::DeltaPhi => BinVariable::DeltaPhi,
        };
    }
    if let Some(r) = a.readout {
        cfg.readout = match r {
            ReadoutArg::Deterministic => Readout::Deterministic,
            ReadoutArg::Sampled => Readout::Sampled,
        };
    }
    if let Some(e) = a.erratum_mode {
        cfg.erratum_mode = match e {
            ErratumArg::Derived => ErratumMode::Derived,
            ErratumArg::Printed => ErratumMode::Printed,
        };
    }
    cfg.validate()?;
    let format = a.format.or(keys.format).unwrap_or(Format::Csv);
    let ext = match format {
        Format::Csv => "csv",
        Format::Json => "json",
    };
    let estimates = a
        .estimates_out
        .clone()
        .or(keys.estimates_out)
        .or_else(|| default_out(&format!("estimates.{ext}")));
    let records = a
        .records_out
        .clone()
        .or(keys.records_out);
    let manifest = a.manifest_out.clone().or(keys.manifest_out).or_else(|| {
        estimates.as_ref().map(|p| {
            let mut s = p.clone().into_os_string();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    });
    Ok((
        cfg.resolved(),
        SimulateOutputs {
            records,
            estimates,
            manifest,
            format,
        },
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulateOutputs {
    pub records: Option<PathBuf>,
    /// `None` writes to standard output.
    pub estimates: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub format: Format,
}

#[derive(Serialize)]
struct EstimatesJson<'a> {
    schema: &'static str,
    report: &'a BinningReport,
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<RunManifest> {
    let (cfg, outs) = resolve_simulate(a)?;
    let exp = Experiment::new(&cfg)?;
    let records = exp.run()?;
    let report = bin_and_estimate(&records, cfg.bins, cfg.bin_variable)?;
    let estimates = match outs.format {
        Format::Csv => estimates_csv(&report),
        Format::Json => to_json(&EstimatesJson {
            schema: crate::experiment::ESTIMATES_SCHEMA,
            report: &report,
        }),
    };
    let records_sha256 = match &outs.records {
        Some(p) => {
            let text = match outs.format {
                Format::Csv => records_csv(&records),
                Format::Json => to_json(&records),
            };
            write_out(Some(p), &text)?;
            Some(sha256_hex(text.as_bytes()))
        }
        None => None,
    };
    write_out(outs.estimates.as_deref(), &estimates)?;
    let estimates_sha256 = sha256_hex(estimates.as_bytes());
    let config_json = serde_json::to_string(&cfg).expect("serializable config");
    let manifest = RunManifest {
        tool: "fock-chsh".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        timestamp_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        erratum_mode: cfg.erratum_mode,
        delta_phi_branch: format!(
            "principal branch: delta_phi = asin(-c) in [-pi/2, pi/2]; e.g. c = -1 -> {}",
            principal_delta_phi(-1.0)
        ),
        acceptance_exact: exp.acceptance(),
        n_shots: report.n_shots,
        n_accepted: report.n_accepted,
        n_without_c: report.n_without_c,
        reproducibility_hash: sha256_hex(format!("{config_json}\n{estimates_sha256}").as_bytes()),
        estimates_sha256,
        records_sha256,
        config: cfg,
    };
    if let Some(p) = &outs.manifest {
        write_out(Some(p), &to_json(&manifest))?;
    }
    Ok(manifest)
}

pub fn cmd_verify(a: &VerifyArgs) -> Result<Vec<CheckResult>> {
    let opts = VerifyOptions {
        exact_tolerance: a.tolerance,
        representation_tolerance: a.representation_tolerance,
        sigmas: a.sigmas,
        shots: a.shots,
        seed: a.seed,
        quadrature: a.quadrature,
    };
    let results = run_all(&opts)?;
    let text = match a.format {
        Format::Json => to_json(&results),
        Format::Csv => {
            let mut s = format!("{VERIFY_HEADER}\n");
            for r in &results {
                s.push_str(&format!(
                    "{},{:e},{:e},{}\n",
                    r.name,
                    r.deviation,
                    r.tolerance,
                    if r.passed { "pass" } else { "fail" }
                ));
            }
            s
        }
    };
    let path = a.out.clone().or_else(|| default_out("verify.json"));
    write_out(path.as_deref(), &text)?;
    for r in &results {
        eprintln!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
    }
    Ok(results)
}

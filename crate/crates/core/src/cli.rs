//! Command-line front end. Every subcommand writes one artifact (JSON, CSV or
//! JSON lines) and one summary line carrying the headline number.
//!
//! Frequencies and couplings on the command line are in units of `γ`.
//! Arguments can also be supplied as a JSON run config (`run --config`),
//! which uses the same field names and defaults and rejects unknown keys.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;

use crate::error::{Error, Result};
use crate::estimation::{
    homodyne_optimal_lo, homodyne_simulate, noon_nominal_for_phase, noon_simulate, snr_lau_clerk,
    HomodyneConfig, NoonCountingConfig, TrialReport,
};
use crate::gwsm::gwsm_spectrum;
use crate::optimize::{landscape_all, offsurface_scan, sweep_oqfi, Axis, OffsurfaceScan, SweepGrid};
use crate::qfi::{
    coherent_qfi, coherent_qfi_fidelity_oracle, noon_qfi, noon_qfi_fidelity_oracle, oqfi_value, QfiResult,
    StateKind, DEFAULT_FIDELITY_STEPS,
};
use crate::resonator::{build_model, is_near_singular, omega_eigenvalues, transfer_k, SystemParams};
use crate::smallcomplex::{CMat2, C64};
use crate::states::{optimal_coherent_probe, ModeKind, ModeState, NoonSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_SINGULAR: i32 = 3;

/// Worker count for sweeps and simulations; unset or 0 uses all cores.
pub const THREADS_ENV: &str = "ES_QFI_THREADS";

#[derive(Debug, Parser)]
#[command(name = "es-qfi", version, about = "Cross-coupling QFI for a two-mode resonator with retroreflective feedback")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "subcommand", content = "args", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Command {
    /// Model matrices, eigenfrequencies, K(ω), A(ω) and identity residuals at one frequency.
    Model(ModelArgs),
    /// QFI of a probe placed at a given frequency along the local generator eigenvectors.
    Qfi(QfiArgs),
    /// Frequency-optimized QFI.
    Oqfi(OqfiArgs),
    /// o-QFI over a (rho, phi) grid.
    Sweep(SweepArgs),
    /// A_ll over an (omega, epsilon) grid.
    Landscape(LandscapeArgs),
    /// o-QFI as a function of epsilon.
    Scan(ScanArgs),
    /// Monte Carlo estimation trials for a measurement scheme.
    Simulate(SimulateArgs),
    /// Homodyne signal-to-noise ratio under the linear-shift model.
    Snr(SnrArgs),
    /// Print a matplotlib script that plots a grid CSV.
    PlotScript(PlotArgs),
    /// Execute a JSON run config.
    #[serde(skip)]
    Run(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateChoice {
    Coherent,
    Noon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Homodyne,
    Noon,
}

/// `lo:hi:n`, or a single value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl RangeSpec {
    pub fn axis(&self, name: &str) -> Result<Axis> {
        Axis::new(name, self.min, self.max, self.count)
    }
}

impl FromStr for RangeSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("bad number {t:?} in range {s:?}: {e}"));
        match parts.as_slice() {
            [v] => {
                let v = num(v)?;
                Ok(Self { min: v, max: v, count: 1 })
            }
            [lo, hi, n] => {
                let count = n.trim().parse::<usize>().map_err(|e| format!("bad count {n:?} in range {s:?}: {e}"))?;
                Ok(Self { min: num(lo)?, max: num(hi)?, count })
            }
            _ => Err(format!("range must be lo:hi:n or a single value, got {s:?}")),
        }
    }
}

impl fmt::Display for RangeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.count == 1 && self.min == self.max {
            write!(f, "{}", self.min)
        } else {
            write!(f, "{}:{}:{}", self.min, self.max, self.count)
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RangeWire {
    Text(String),
    Value(f64),
}

impl Serialize for RangeSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for RangeSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match RangeWire::deserialize(d)? {
            RangeWire::Text(t) => t.parse().map_err(serde::de::Error::custom),
            RangeWire::Value(v) => Ok(Self { min: v, max: v, count: 1 }),
        }
    }
}

/// System parameters. `phi` is in radians; `--phi-over-pi` gives it in units of π.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamArgs {
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub rho: f64,
    #[arg(long, allow_hyphen_values = true, conflicts_with = "phi_over_pi")]
    pub phi: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub phi_over_pi: Option<f64>,
    /// Cross-coupling, units of gamma.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub epsilon: f64,
}

impl ParamArgs {
    pub fn params(&self) -> Result<SystemParams> {
        let phi = resolve_phi(self.phi, self.phi_over_pi)?;
        SystemParams::new(self.gamma, self.rho, phi, self.epsilon * self.gamma)
    }
}

/// `(γ, ρ, φ)` without a coupling, for commands that range over `ε`.
#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceArgs {
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub rho: f64,
    #[arg(long, allow_hyphen_values = true, conflicts_with = "phi_over_pi")]
    pub phi: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub phi_over_pi: Option<f64>,
}

impl SurfaceArgs {
    fn phi(&self) -> Result<f64> {
        resolve_phi(self.phi, self.phi_over_pi)
    }

    fn template(&self) -> Result<SystemParams> {
        SystemParams::new(self.gamma, self.rho, self.phi()?, 0.0)
    }
}

fn resolve_phi(phi: Option<f64>, phi_over_pi: Option<f64>) -> Result<f64> {
    match (phi, phi_over_pi) {
        (Some(_), Some(_)) => Err(Error::InvalidParams("give either phi or phi_over_pi, not both".into())),
        (Some(v), None) => Ok(v),
        (None, Some(v)) => Ok(v * std::f64::consts::PI),
        (None, None) => Ok(0.0),
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateArgs {
    #[arg(long, value_enum, default_value_t = StateChoice::Coherent)]
    pub state: StateChoice,
    /// Mean photon number of a coherent probe.
    #[arg(long, default_value_t = 1.0)]
    pub nbar: f64,
    /// Photon number of a NOON probe.
    #[arg(long, default_value_t = 1)]
    pub n: u32,
}

impl StateArgs {
    pub fn kind(&self) -> StateKind {
        match self.state {
            StateChoice::Coherent => StateKind::Coherent { photon_number: self.nbar },
            StateChoice::Noon => StateKind::Noon { n_photons: self.n },
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    /// Probe frequency, units of gamma.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub omega: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QfiArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub state: StateArgs,
    /// Probe frequency, units of gamma.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub omega: f64,
    /// Use the extrapolated Bures-limit oracle instead of the generator formula.
    #[arg(long, default_value_t = false)]
    pub fidelity: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OqfiArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub state: StateArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepArgs {
    #[command(flatten)]
    pub state: StateArgs,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub gamma: f64,
    #[arg(long, default_value = "0:1:51", allow_hyphen_values = true)]
    pub rho: RangeSpec,
    /// Radians.
    #[arg(long, default_value = "0:3.141592653589793:51", allow_hyphen_values = true)]
    pub phi: RangeSpec,
    /// Units of gamma.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value_t = GridFormat::Csv)]
    pub format: GridFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LandscapeArgs {
    #[command(flatten)]
    pub surface: SurfaceArgs,
    /// Units of gamma.
    #[arg(long, default_value = "-2:2:201", allow_hyphen_values = true)]
    pub omega: RangeSpec,
    /// Units of gamma.
    #[arg(long, default_value = "-1:1:201", allow_hyphen_values = true)]
    pub epsilon: RangeSpec,
    #[arg(long, value_enum, default_value_t = GridFormat::Csv)]
    pub format: GridFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanArgs {
    #[command(flatten)]
    pub surface: SurfaceArgs,
    #[command(flatten)]
    pub state: StateArgs,
    /// Units of gamma.
    #[arg(long, default_value = "-0.45:0.45:19", allow_hyphen_values = true)]
    pub epsilon: RangeSpec,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, value_enum, default_value_t = Scheme::Homodyne)]
    pub scheme: Scheme,
    /// Probe photon number (homodyne).
    #[arg(long, default_value_t = 2.0)]
    pub nbar: f64,
    /// NOON photon number (counting).
    #[arg(long, default_value_t = 2)]
    pub n: u32,
    /// Local oscillator photon number (homodyne).
    #[arg(long, default_value_t = 1e6)]
    pub n_lo: f64,
    #[arg(long, default_value_t = 100_000)]
    pub m: u64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Number of runs with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    pub batch: u64,
    /// True coupling, units of gamma; defaults to the nominal one.
    #[arg(long, allow_hyphen_values = true)]
    pub epsilon_true: Option<f64>,
    /// Counting only: move the nominal point so that 2Nθ equals this phase (radians).
    #[arg(long, allow_hyphen_values = true)]
    pub phase_target: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Append one report per line to this file.
    #[arg(long)]
    pub jsonl: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnrArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[arg(long, default_value_t = 1.0)]
    pub nbar: f64,
    /// Coupling shift to detect, units of gamma.
    #[arg(long, default_value_t = 1e-3, allow_hyphen_values = true)]
    pub delta: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotArgs {
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
}

fn clap_defaults<T: Args + FromArgMatches>() -> T {
    let cmd = T::augment_args(clap::Command::new("defaults"));
    let matches = cmd.try_get_matches_from(["defaults"]).expect("every argument has a default");
    T::from_arg_matches(&matches).expect("defaults are valid")
}

macro_rules! defaults_from_clap {
    ($($t:ty),*) => {
        $(impl Default for $t {
            fn default() -> Self {
                clap_defaults()
            }
        })*
    };
}

defaults_from_clap!(
    ParamArgs,
    SurfaceArgs,
    StateArgs,
    ModelArgs,
    QfiArgs,
    OqfiArgs,
    SweepArgs,
    LandscapeArgs,
    ScanArgs,
    SimulateArgs,
    SnrArgs,
    PlotArgs
);

/// Parses a JSON run config.
pub fn parse_run_config(text: &str) -> Result<Command> {
    serde_json::from_str(text).map_err(|e| Error::InvalidParams(format!("run config: {e}")))
}

/// `[[[re, im], [re, im]], [[re, im], [re, im]]]`.
pub type MatWire = [[[f64; 2]; 2]; 2];

fn mat_wire(m: &CMat2) -> MatWire {
    let e = |i, j| -> [f64; 2] {
        let z: C64 = m[(i, j)];
        [z.re, z.im]
    };
    [[e(0, 0), e(0, 1)], [e(1, 0), e(1, 1)]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Residuals {
    pub s_unitarity: f64,
    pub dissipation: f64,
    pub decomposition: f64,
    pub k_unitarity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelReport {
    pub params: SystemParams,
    pub omega: f64,
    pub s: MatWire,
    pub b: MatWire,
    pub h_tilde: MatWire,
    pub h_eff: MatWire,
    /// `[[re, im], [re, im]]` for `Ω₊, Ω₋`.
    pub eigenfrequencies: [[f64; 2]; 2],
    pub k: Option<MatWire>,
    pub gwsm: Option<MatWire>,
    pub gwsm_eigenvalues: Option<[f64; 2]>,
    pub residuals: Residuals,
    pub near_singular: bool,
    /// True when `ω` is a resolvent pole and `K`, `A` are undefined.
    pub singular: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrReport {
    pub params: SystemParams,
    pub photon_number: f64,
    pub delta: f64,
    pub snr: f64,
    pub qfi: f64,
    /// `snr / (δ²·qfi)`.
    pub ratio: f64,
}

/// Printed on stderr for every failed command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorReport {
    pub error: String,
    pub singular: bool,
    pub exit_code: i32,
    pub message: String,
}

impl ErrorReport {
    pub fn from_error(e: &Error) -> Self {
        let kind = match e {
            Error::NotHermitian { .. } => "not_hermitian",
            Error::SingularMatrix { .. } => "singular_matrix",
            Error::SingularDenominator { .. } => "singular_denominator",
            Error::InvalidParams(_) => "invalid_params",
            Error::InvalidState(_) => "invalid_state",
            Error::ZeroSensitivity { .. } => "zero_sensitivity",
            Error::UndefinedPhase => "undefined_phase",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        };
        Self { error: kind.into(), singular: e.is_singular(), exit_code: exit_code(e), message: e.to_string() }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        _ if e.is_singular() => EXIT_SINGULAR,
        Error::InvalidParams(_) | Error::InvalidState(_) | Error::ZeroSensitivity { .. } | Error::UndefinedPhase => {
            EXIT_INVALID
        }
        _ => EXIT_FAILURE,
    }
}

/// What a command produced: the artifact text, where it goes, and the summary.
struct Outcome {
    artifact: String,
    out: Option<PathBuf>,
    summary: String,
    /// Nonzero for reports that are emitted but still signal a problem.
    code: i32,
}

impl Outcome {
    fn new(artifact: String, out: &Option<PathBuf>, summary: String) -> Self {
        Self { artifact, out: out.clone(), summary, code: EXIT_OK }
    }
}

fn json_artifact<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Appends lines to a JSON-lines file without ever leaving it half written.
pub fn append_atomic(path: &Path, lines: &str) -> Result<()> {
    let mut contents = match fs::read_to_string(path) {
        Ok(s) => s,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(e.into()),
    };
    if !contents.is_empty() && !contents.ends_with('\n') {
        contents.push('\n');
    }
    contents.push_str(lines);
    write_atomic(path, &contents)
}

fn cmd_model(a: &ModelArgs) -> Result<Outcome> {
    let p = a.params.params()?;
    let w = a.omega * p.gamma();
    let m = build_model(&p);
    let (plus, minus) = omega_eigenvalues(&p);
    let (k, singular) = match transfer_k(&p, w) {
        Ok(k) => (Some(k), false),
        Err(e) if e.is_singular() => (None, true),
        Err(e) => return Err(e),
    };
    let spectrum = if singular { None } else { Some(gwsm_spectrum(&p, w)?) };
    let gwsm = if singular { None } else { Some(crate::gwsm::gwsm_a(&p, w)?) };
    let report = ModelReport {
        params: p,
        omega: w,
        s: mat_wire(&m.s),
        b: mat_wire(&m.b),
        h_tilde: mat_wire(&m.h_tilde),
        h_eff: mat_wire(&m.h_eff),
        eigenfrequencies: [[plus.re, plus.im], [minus.re, minus.im]],
        k: k.as_ref().map(mat_wire),
        gwsm: gwsm.as_ref().map(mat_wire),
        gwsm_eigenvalues: spectrum.map(|s| [s.lambda_minus, s.lambda_plus]),
        residuals: Residuals {
            s_unitarity: m.unitarity_residual(),
            dissipation: m.dissipation_residual(),
            decomposition: m.decomposition_residual(),
            k_unitarity: k.map(|k| k.unitarity_residual()),
        },
        near_singular: is_near_singular(&p, w),
        singular,
    };
    let summary = match &report.k {
        Some(k) => format!(
            "model: K = [[{}, {}], [{}, {}]], singular = false",
            fmt_c(k[0][0]),
            fmt_c(k[0][1]),
            fmt_c(k[1][0]),
            fmt_c(k[1][1])
        ),
        None => format!("model: singular = true at omega = {w}"),
    };
    let mut outcome = Outcome::new(json_artifact(&report)?, &a.out, summary);
    if singular {
        outcome.code = EXIT_SINGULAR;
    }
    Ok(outcome)
}

/// Shortest round-trip form, switching to exponent notation for very small or large magnitudes.
fn num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-3..1e7).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

fn fmt_c(z: [f64; 2]) -> String {
    let clean = |x: f64| if x == 0.0 { 0.0 } else { x };
    format!("{}{:+}i", clean(z[0]), clean(z[1]))
}

fn probe_at(p: &SystemParams, omega: f64, state: StateKind) -> Result<crate::qfi::Probe> {
    let spec = gwsm_spectrum(p, omega)?;
    match state {
        StateKind::Coherent { photon_number } => {
            if !(photon_number.is_finite() && photon_number >= 0.0) {
                return Err(Error::InvalidState(format!("photon number must be >= 0, got {photon_number}")));
            }
            let v = if spec.lambda_plus.abs() >= spec.lambda_minus.abs() { spec.v_plus } else { spec.v_minus };
            let beta = ModeState::monochromatic(ModeKind::CoherentAmplitude, omega, v.scale_real(photon_number.sqrt()))?;
            Ok(crate::qfi::Probe::Coherent(beta))
        }
        StateKind::Noon { n_photons } => {
            let psi1 = ModeState::monochromatic(ModeKind::SinglePhotonMode, omega, spec.v_minus)?;
            let psi2 = ModeState::monochromatic(ModeKind::SinglePhotonMode, omega, spec.v_plus)?;
            Ok(crate::qfi::Probe::Noon(NoonSpec::new(psi1, psi2, n_photons)?))
        }
    }
}

fn cmd_qfi(a: &QfiArgs) -> Result<Outcome> {
    let p = a.params.params()?;
    let w = a.omega * p.gamma();
    let steps = DEFAULT_FIDELITY_STEPS;
    let result: QfiResult = match (probe_at(&p, w, a.state.kind())?, a.fidelity) {
        (crate::qfi::Probe::Coherent(b), false) => coherent_qfi(&p, &b)?,
        (crate::qfi::Probe::Coherent(b), true) => coherent_qfi_fidelity_oracle(&p, &b, &steps)?,
        (crate::qfi::Probe::Noon(s), false) => noon_qfi(&p, &s)?,
        (crate::qfi::Probe::Noon(s), true) => noon_qfi_fidelity_oracle(&p, &s, &steps)?,
    };
    let summary = format!("qfi = {}", num(result.value));
    Ok(Outcome::new(json_artifact(&result)?, &a.out, summary))
}

fn cmd_oqfi(a: &OqfiArgs) -> Result<Outcome> {
    let p = a.params.params()?;
    let result = oqfi_value(&p, a.state.kind(), p.epsilon())?;
    let summary = format!("oqfi = {}", num(result.value));
    Ok(Outcome::new(json_artifact(&result)?, &a.out, summary))
}

fn grid_artifact(grid: &SweepGrid, format: GridFormat) -> Result<String> {
    match format {
        GridFormat::Csv => grid.to_csv(),
        GridFormat::Json => {
            let mut s = grid.to_json()?;
            if !s.ends_with('\n') {
                s.push('\n');
            }
            Ok(s)
        }
    }
}

fn grid_summary(label: &str, grid: &SweepGrid) -> String {
    let flagged = grid.flags.iter().filter(|&&f| f).count();
    let show = |v: Option<f64>| v.map_or_else(|| "none".to_string(), num);
    format!(
        "{label}: max = {}, min = {}, cells = {}, flagged = {flagged}",
        show(grid.finite_max()),
        show(grid.finite_min()),
        grid.values.len()
    )
}

fn cmd_sweep(a: &SweepArgs) -> Result<Outcome> {
    let grid = sweep_oqfi(a.state.kind(), &a.rho.axis("rho")?, &a.phi.axis("phi")?, a.epsilon, a.gamma)?;
    Ok(Outcome::new(grid_artifact(&grid, a.format)?, &a.out, grid_summary("sweep oqfi", &grid)))
}

fn cmd_landscape(a: &LandscapeArgs) -> Result<Outcome> {
    let s = &a.surface;
    let grid = landscape_all(s.phi()?, &a.omega.axis("omega")?, &a.epsilon.axis("epsilon")?, s.rho, s.gamma)?;
    Ok(Outcome::new(grid_artifact(&grid, a.format)?, &a.out, grid_summary("landscape a_ll", &grid)))
}

fn cmd_scan(a: &ScanArgs) -> Result<Outcome> {
    let scan: OffsurfaceScan = offsurface_scan(&a.surface.template()?, a.state.kind(), &a.epsilon.axis("epsilon")?)?;
    let best = scan.rows.iter().filter(|r| r.oqfi.is_finite()).max_by(|x, y| x.oqfi.total_cmp(&y.oqfi));
    let summary = match best {
        Some(r) => format!("scan: max oqfi = {} at epsilon = {}", num(r.oqfi), num(r.epsilon)),
        None => "scan: no finite values".to_string(),
    };
    Ok(Outcome::new(json_artifact(&scan)?, &a.out, summary))
}

fn simulate_one(a: &SimulateArgs, p: &SystemParams, seed: u64) -> Result<TrialReport> {
    let g = p.gamma();
    match a.scheme {
        Scheme::Homodyne => {
            let probe = optimal_coherent_probe(p, a.nbar)?;
            let lo = homodyne_optimal_lo(p, &probe, a.n_lo)?;
            let cfg = HomodyneConfig::new(*p, probe, lo)?;
            let eps_true = a.epsilon_true.map_or(p.epsilon(), |e| e * g);
            homodyne_simulate(&cfg, eps_true, a.m, seed)
        }
        Scheme::Noon => {
            let mut cfg = NoonCountingConfig::optimal(*p, a.n)?;
            if let Some(target) = a.phase_target {
                let eps = noon_nominal_for_phase(&cfg, target)?;
                cfg = cfg.with_nominal(eps)?;
            }
            let eps_true = a.epsilon_true.map_or(cfg.epsilon_nominal(), |e| e * g);
            noon_simulate(&cfg, eps_true, a.m, seed)
        }
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<Outcome> {
    if a.batch == 0 {
        return Err(Error::InvalidParams("batch must be at least 1".into()));
    }
    let p = a.params.params()?;
    let reports: Vec<TrialReport> = (0..a.batch)
        .map(|i| simulate_one(a, &p, a.seed.wrapping_add(i)))
        .collect::<Result<_>>()?;
    let mut lines = String::new();
    for r in &reports {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    if let Some(path) = &a.jsonl {
        append_atomic(path, &lines)?;
    }
    let first = &reports[0];
    let summary = format!(
        "simulate {}: ratio = {} (sigma_stat = {}), mse = {}, crb = {}, runs = {}",
        first.scheme,
        num(first.ratio),
        num(first.sigma_stat),
        num(first.mse),
        num(first.crb),
        reports.len()
    );
    let artifact = if reports.len() == 1 { json_artifact(first)? } else { lines };
    Ok(Outcome::new(artifact, &a.out, summary))
}

fn cmd_snr(a: &SnrArgs) -> Result<Outcome> {
    let p = a.params.params()?;
    let probe = optimal_coherent_probe(&p, a.nbar)?;
    let delta = a.delta * p.gamma();
    let snr = snr_lau_clerk(&p, delta, &probe)?;
    let qfi = coherent_qfi(&p, &probe)?.value;
    let report = SnrReport { params: p, photon_number: a.nbar, delta, snr, qfi, ratio: snr / (delta * delta * qfi) };
    let summary = format!("snr = {}, ratio = {}", num(report.snr), num(report.ratio));
    Ok(Outcome::new(json_artifact(&report)?, &a.out, summary))
}

const PLOT_SCRIPT: &str = r##"#!/usr/bin/env python3
# Plots a two-axis grid CSV written by `es-qfi sweep` or `es-qfi landscape`.
# usage: python3 plot_grid.py grid.csv [out.png]
import csv
import sys

import matplotlib.pyplot as plt
import numpy as np

path = sys.argv[1]
axes, quantity, rows = [], "value", []
with open(path) as f:
    for line in f:
        if line.startswith("# axis,"):
            _, _, name, lo, hi, n = line.strip().split(",")
            axes.append((name, float(lo), float(hi), int(n)))
        elif line.startswith("# quantity,"):
            quantity = line.strip().split(",", 1)[1]
        elif not line.startswith("#"):
            rows.append(line)
reader = csv.DictReader(rows)
data = [r for r in reader]
(xn, x0, x1, nx), (yn, y0, y1, ny) = axes
z = np.array([float(r["value"]) if r["value"] else np.nan for r in data]).reshape(nx, ny)
x = np.linspace(x0, x1, nx)
y = np.linspace(y0, y1, ny)
fig, ax = plt.subplots()
mesh = ax.pcolormesh(y, x, z, shading="auto")
fig.colorbar(mesh, label=quantity)
ax.set_xlabel(yn)
ax.set_ylabel(xn)
if len(sys.argv) > 2:
    fig.savefig(sys.argv[2], dpi=150)
else:
    plt.show()
"##;

fn cmd_plot_script(a: &PlotArgs) -> Result<Outcome> {
    Ok(Outcome::new(PLOT_SCRIPT.to_string(), &a.out, "plot-script: python3 plot_grid.py grid.csv [out.png]".into()))
}

fn dispatch(cmd: &Command) -> Result<Outcome> {
    match cmd {
        Command::Model(a) => cmd_model(a),
        Command::Qfi(a) => cmd_qfi(a),
        Command::Oqfi(a) => cmd_oqfi(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Landscape(a) => cmd_landscape(a),
        Command::Scan(a) => cmd_scan(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Snr(a) => cmd_snr(a),
        Command::PlotScript(a) => cmd_plot_script(a),
        Command::Run(a) => {
            let cfg = parse_run_config(&fs::read_to_string(&a.config)?)?;
            if matches!(cfg, Command::Run(_)) {
                return Err(Error::InvalidParams("a run config cannot nest another run".into()));
            }
            dispatch(&cfg)
        }
    }
}

fn thread_count() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::InvalidParams(format!("{THREADS_ENV} must be a non-negative integer, got {v:?}"))),
        _ => Ok(0),
    }
}

fn execute(cmd: &Command) -> Result<Outcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    pool.install(|| dispatch(cmd))
}

fn report_error(e: &Error, stderr: &mut dyn Write) -> i32 {
    let report = ErrorReport::from_error(e);
    let line = serde_json::to_string(&report).unwrap_or_else(|_| format!("{{\"message\":{:?}}}", e.to_string()));
    let _ = writeln!(stderr, "{line}");
    report.exit_code
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
///
/// Without `--out` the artifact goes to `stdout` and the summary to `stderr`;
/// with `--out` the summary goes to `stdout`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = if e.use_stderr() { write!(stderr, "{e}") } else { write!(stdout, "{e}") };
            return code;
        }
    };
    let outcome = match execute(&cli.command) {
        Ok(o) => o,
        Err(e) => return report_error(&e, stderr),
    };
    let written = match &outcome.out {
        Some(path) => write_atomic(path, &outcome.artifact).map(|_| writeln!(stdout, "{}", outcome.summary)),
        None => Ok(stdout
            .write_all(outcome.artifact.as_bytes())
            .and_then(|_| writeln!(stderr, "{}", outcome.summary))),
    };
    match written {
        Ok(Ok(())) => outcome.code,
        Ok(Err(e)) => report_error(&Error::Io(e), stderr),
        Err(e) => report_error(&e, stderr),
    }
}

//! Command-line front end.
//!
//! Every command reads an optional JSON config file and then applies flag
//! overrides. Results go to `--output` or stdout: CSV for tables, JSON for
//! matrices. CSV files start with `#` comment lines holding the command, the
//! fully resolved config and the column names. Floats are written with 17
//! significant digits.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dynamics::{self, EnvelopeSpec, HamiltonianKind, TimeGrid};
use crate::error::{Error, Result};
use crate::linalg::{self, c, CMatrix, CVector};
use crate::models::{self, ModelKind, ModelSpec};
use crate::ms_core::{self, BipartiteSystem, LevelSet};
use crate::nondegenerate::{self, QFactor};

#[derive(Debug, Parser)]
#[command(name = "morris-shore", version, about = "Morris-Shore reduction of coupled multilevel systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// MS transformation, couplings, dark states and pairing permutation (JSON).
    Decompose(CommonArgs),
    /// κ, Q, QΞ, H_eff and the non-degenerate MS Hamiltonian (JSON).
    Effective(CommonArgs),
    /// Exact versus approximate eigenvalues over a δ/Ω_rms range.
    Eigencompare {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        range: RangeArgs,
    },
    /// Population time series for the selected Hamiltonians.
    Propagate {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        time: TimeArgs,
    },
    /// Full-versus-effective errors over a δ/Ω_rms range, with fitted slopes.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        range: RangeArgs,
        #[command(flatten)]
        time: TimeArgs,
    },
}

#[derive(Debug, Clone, Args, Default)]
pub struct CommonArgs {
    /// JSON config file; flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in model.
    #[arg(long)]
    pub model: Option<ModelKind>,
    /// Stokes Rabi frequency Ω_s (1/T).
    #[arg(long = "os", allow_negative_numbers = true)]
    pub omega_s: Option<f64>,
    /// Pump Rabi frequency Ω_p (1/T).
    #[arg(long = "op", allow_negative_numbers = true)]
    pub omega_p: Option<f64>,
    /// Control Rabi frequency Ω_c (1/T).
    #[arg(long = "oc", allow_negative_numbers = true)]
    pub omega_c: Option<f64>,
    /// Double-Λ/diamond Rabi frequency Ω_d (1/T).
    #[arg(long = "od", allow_negative_numbers = true)]
    pub omega_d: Option<f64>,
    /// Shift δ of the Λ and tripod models.
    #[arg(long, allow_negative_numbers = true)]
    pub delta: Option<f64>,
    /// Lower-set shift δ_g of the double-Λ/diamond models.
    #[arg(long, allow_negative_numbers = true)]
    pub delta_g: Option<f64>,
    /// Upper-set shift δ_e of the double-Λ/diamond models.
    #[arg(long, allow_negative_numbers = true)]
    pub delta_e: Option<f64>,
    /// Common detuning Δ.
    #[arg(long, allow_negative_numbers = true)]
    pub detuning: Option<f64>,
    /// Output file (stdout when omitted).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Args, Default)]
pub struct RangeArgs {
    /// start:stop:count
    #[arg(long)]
    pub delta_over_rms: Option<String>,
}

#[derive(Debug, Clone, Args, Default)]
pub struct TimeArgs {
    /// End of the time window (units of T).
    #[arg(long)]
    pub t_final: Option<f64>,
    /// Number of output intervals.
    #[arg(long)]
    pub steps: Option<usize>,
    /// constant[:amp], gaussian:amp:center:width or sin2:amp:center:width
    #[arg(long)]
    pub envelope: Option<String>,
    /// Comma-separated list of full, effective, degenerate.
    #[arg(long, value_delimiter = ',')]
    pub hamiltonians: Option<Vec<HamiltonianKind>>,
    /// Index of the initially populated state.
    #[arg(long)]
    pub initial: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
}

impl clap::ValueEnum for ModelKind {
    fn value_variants<'a>() -> &'a [Self] {
        &[ModelKind::Lambda, ModelKind::Tripod, ModelKind::DoubleLambda, ModelKind::Diamond]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            ModelKind::Lambda => "lambda",
            ModelKind::Tripod => "tripod",
            ModelKind::DoubleLambda => "double-lambda",
            ModelKind::Diamond => "diamond",
        }))
    }
}

impl clap::ValueEnum for HamiltonianKind {
    fn value_variants<'a>() -> &'a [Self] {
        &[HamiltonianKind::Full, HamiltonianKind::Effective, HamiltonianKind::Degenerate]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(match self {
            HamiltonianKind::Full => "full",
            HamiltonianKind::Effective => "effective",
            HamiltonianKind::Degenerate => "degenerate",
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Decompose,
    Effective,
    Eigencompare,
    Propagate,
    Sweep,
}

/// A complex matrix entry in a config file: a number or `[re, im]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Real(f64),
    Complex([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftDef {
    pub name: String,
    pub value: f64,
    pub weights: Vec<f64>,
}

/// A system given directly by its coupling matrix (lower rows, upper columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDef {
    pub coupling: Vec<Vec<Entry>>,
    #[serde(default)]
    pub detuning: f64,
    #[serde(default)]
    pub shifts: Vec<ShiftDef>,
}

impl SystemDef {
    pub fn build(&self) -> Result<BipartiteSystem> {
        let g = self.coupling.len();
        let e = self.coupling.first().map_or(0, Vec::len);
        if self.coupling.iter().any(|row| row.len() != e) {
            return Err(Error::Config("system.coupling rows must all have the same length".into()));
        }
        let v = CMatrix::from_fn(g, e, |i, j| match self.coupling[i][j] {
            Entry::Real(x) => c(x, 0.0),
            Entry::Complex([re, im]) => c(re, im),
        });
        let mut sys = BipartiteSystem::new(v, self.detuning)?;
        for s in &self.shifts {
            sys = sys.with_shift(s.name.clone(), s.value, s.weights.clone())?;
        }
        Ok(sys)
    }
}

/// δ/Ω_rms values `start, ..., stop` (`count` points).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRange {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl SweepRange {
    pub fn parse(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        let bad = || Error::Config(format!("--delta-over-rms expects start:stop:count, got '{text}'"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let start = parts[0].trim().parse().map_err(|_| bad())?;
        let stop = parts[1].trim().parse().map_err(|_| bad())?;
        let count = parts[2].trim().parse().map_err(|_| bad())?;
        Self { start, stop, count }.validated()
    }

    fn validated(self) -> Result<Self> {
        if !(self.start.is_finite() && self.stop.is_finite()) {
            return Err(Error::Config("delta_over_rms bounds must be finite".into()));
        }
        if self.count == 0 || self.stop < self.start || (self.count == 1 && self.stop != self.start) {
            return Err(Error::Config(format!(
                "delta_over_rms range {}:{}:{} is empty or inconsistent",
                self.start, self.stop, self.count
            )));
        }
        Ok(self)
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.start];
        }
        let h = (self.stop - self.start) / (self.count - 1) as f64;
        let mut v: Vec<f64> = (0..self.count).map(|k| self.start + h * k as f64).collect();
        v[self.count - 1] = self.stop;
        v
    }
}

/// Contents of a config file; also the resolved configuration echoed into
/// every output.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<CommandKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemDef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_over_rms: Option<SweepRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_final: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope: Option<EnvelopeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonians: Option<Vec<HamiltonianKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

pub fn parse_config(text: &str, origin: &str) -> Result<RunConfig> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            parse_config(&text, &p.display().to_string())
        }
    }
}

pub fn parse_envelope(text: &str) -> Result<EnvelopeSpec> {
    let parts: Vec<&str> = text.split(':').collect();
    let nums: Vec<f64> = parts[1..]
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("bad number in --envelope '{text}'")))?;
    match (parts[0], nums.as_slice()) {
        ("constant", []) => Ok(EnvelopeSpec::constant(1.0)),
        ("constant", [a]) => EnvelopeSpec::constant(*a).validated(),
        ("gaussian", [a, c, w]) => EnvelopeSpec::gaussian(*a, *c, *w),
        ("sin2", [a, c, w]) => EnvelopeSpec::sin2(*a, *c, *w),
        _ => Err(Error::Config(format!(
            "--envelope expects constant[:amp], gaussian:amp:center:width or sin2:amp:center:width, got '{text}'"
        ))),
    }
}

/// Merges the model parameters of the file and the flags; missing ones take
/// the model defaults.
fn resolve_model(file: Option<&ModelSpec>, args: &CommonArgs) -> Result<ModelSpec> {
    let kind = match (args.model, file) {
        (Some(k), _) => k,
        (None, Some(spec)) => spec.kind,
        (None, None) => unreachable!("checked by caller"),
    };
    let mut spec = ModelSpec::with_defaults(kind);
    if let Some(f) = file.filter(|f| f.kind == kind) {
        let merge = |dst: &mut Option<f64>, src: Option<f64>| {
            if src.is_some() {
                *dst = src;
            }
        };
        merge(&mut spec.omega_p, f.omega_p);
        merge(&mut spec.omega_s, f.omega_s);
        merge(&mut spec.omega_c, f.omega_c);
        merge(&mut spec.omega_d, f.omega_d);
        merge(&mut spec.delta, f.delta);
        merge(&mut spec.delta_g, f.delta_g);
        merge(&mut spec.delta_e, f.delta_e);
        spec.detuning = f.detuning;
    }
    let flags = [
        (&mut spec.omega_p, args.omega_p),
        (&mut spec.omega_s, args.omega_s),
        (&mut spec.omega_c, args.omega_c),
        (&mut spec.omega_d, args.omega_d),
        (&mut spec.delta, args.delta),
        (&mut spec.delta_g, args.delta_g),
        (&mut spec.delta_e, args.delta_e),
    ];
    for (dst, src) in flags {
        if src.is_some() {
            *dst = src;
        }
    }
    if let Some(d) = args.detuning {
        spec.detuning = d;
    }
    spec.validate()?;
    Ok(spec)
}

/// A fully resolved run.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub command: CommandKind,
    pub config: RunConfig,
    pub system: BipartiteSystem,
    pub format: Format,
}

impl Resolved {
    fn model(&self) -> Option<&ModelSpec> {
        self.config.model.as_ref()
    }
}

fn resolve(
    command: CommandKind,
    common: &CommonArgs,
    range: Option<&RangeArgs>,
    time: Option<&TimeArgs>,
) -> Result<Resolved> {
    let file = load_config(&common.config)?;
    if let Some(c) = file.command {
        if c != command {
            return Err(Error::Config(format!(
                "config is for command {c:?}, but {command:?} was requested"
            )));
        }
    }
    let mut config = RunConfig {
        command: Some(command),
        ..RunConfig::default()
    };

    let model_flags = common.model.is_some()
        || [
            common.omega_p,
            common.omega_s,
            common.omega_c,
            common.omega_d,
            common.delta,
            common.delta_g,
            common.delta_e,
        ]
        .iter()
        .any(Option::is_some);
    let mut system = match (&file.system, file.model.as_ref(), model_flags) {
        (Some(_), Some(_), _) => return Err(Error::Config("config sets both model and system".into())),
        (Some(_), None, true) if common.model.is_some() => {
            return Err(Error::Config("--model conflicts with the system given in the config".into()))
        }
        (Some(_), None, true) => {
            return Err(Error::Config("model parameter flags need a built-in model, not a system".into()))
        }
        (Some(def), None, false) => {
            let mut def = def.clone();
            if let Some(d) = common.detuning {
                def.detuning = d;
            }
            let sys = def.build()?;
            config.system = Some(def);
            sys
        }
        (None, file_model, _) => {
            if common.model.is_none() && file_model.is_none() {
                return Err(Error::Config("no system: pass --model or a config with model or system".into()));
            }
            let spec = resolve_model(file_model, common)?;
            let sys = models::build(&spec)?;
            config.model = Some(spec);
            sys
        }
    };

    if let Some(range) = range {
        let r = match &range.delta_over_rms {
            Some(text) => SweepRange::parse(text)?,
            None => file.delta_over_rms.map(SweepRange::validated).transpose()?.unwrap_or(SweepRange {
                start: 0.0,
                stop: 0.02,
                count: 41,
            }),
        };
        config.delta_over_rms = Some(r);
    } else if file.delta_over_rms.is_some() {
        return Err(Error::Config(format!("delta_over_rms is not used by {command:?}")));
    }

    if let Some(time) = time {
        let t_final = time.t_final.or(file.t_final).unwrap_or(10.0);
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(Error::Config(format!("t_final must be positive, got {t_final}")));
        }
        let steps = time.steps.or(file.steps).unwrap_or(200);
        if steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        let envelope = match &time.envelope {
            Some(text) => parse_envelope(text)?,
            None => file.envelope.clone().map(EnvelopeSpec::validated).transpose()?.unwrap_or(EnvelopeSpec::constant(1.0)),
        };
        let hamiltonians = time
            .hamiltonians
            .clone()
            .or(file.hamiltonians.clone())
            .unwrap_or(vec![HamiltonianKind::Full, HamiltonianKind::Effective]);
        if hamiltonians.is_empty() {
            return Err(Error::Config("hamiltonians list is empty".into()));
        }
        let initial = time.initial.or(file.initial).unwrap_or(0);
        if initial >= system.dim() {
            return Err(Error::Config(format!(
                "initial state {initial} out of range for {} states",
                system.dim()
            )));
        }
        system = system.with_envelope(envelope.clone());
        config.t_final = Some(t_final);
        config.steps = Some(steps);
        config.envelope = Some(envelope);
        config.hamiltonians = Some(hamiltonians);
        config.initial = Some(initial);
    } else if file.t_final.is_some()
        || file.steps.is_some()
        || file.envelope.is_some()
        || file.hamiltonians.is_some()
        || file.initial.is_some()
    {
        return Err(Error::Config(format!("time-propagation settings are not used by {command:?}")));
    }

    let default_format = match command {
        CommandKind::Decompose | CommandKind::Effective => Format::Json,
        _ => Format::Csv,
    };
    let format = common.format.or(file.format).unwrap_or(default_format);
    if format == Format::Csv && default_format == Format::Json {
        return Err(Error::Config(format!("{command:?} only writes JSON")));
    }
    config.format = Some(format);
    config.output = common.output.clone().or(file.output);

    Ok(Resolved {
        command,
        config,
        system,
        format,
    })
}

pub fn resolve_command(command: &Command) -> Result<Resolved> {
    match command {
        Command::Decompose(common) => resolve(CommandKind::Decompose, common, None, None),
        Command::Effective(common) => resolve(CommandKind::Effective, common, None, None),
        Command::Eigencompare { common, range } => resolve(CommandKind::Eigencompare, common, Some(range), None),
        Command::Propagate { common, time } => resolve(CommandKind::Propagate, common, None, Some(time)),
        Command::Sweep { common, range, time } => resolve(CommandKind::Sweep, common, Some(range), Some(time)),
    }
}

/// Runs the command and returns the text written to the output.
pub fn execute(run: &Resolved) -> Result<String> {
    match run.command {
        CommandKind::Decompose => decompose(run),
        CommandKind::Effective => effective(run),
        CommandKind::Eigencompare => eigencompare(run),
        CommandKind::Propagate => propagate(run),
        CommandKind::Sweep => sweep(run),
    }
}

/// Parses, runs and writes the output; the binary's entry point.
pub fn run(cli: &Cli) -> Result<()> {
    let resolved = resolve_command(&cli.command)?;
    let text = execute(&resolved)?;
    match &resolved.config.output {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn matrix_json(m: &CMatrix) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| json!([m[(i, j)].re, m[(i, j)].im])).collect()))
            .collect(),
    )
}

fn vector_json(v: &CVector) -> Value {
    Value::Array(v.iter().map(|z| json!([z.re, z.im])).collect())
}

/// Resolved config as echoed in outputs; the output path is left out so the
/// content does not depend on where it is written.
fn echoed_config(run: &Resolved) -> RunConfig {
    RunConfig {
        output: None,
        ..run.config.clone()
    }
}

fn json_document(run: &Resolved, mut body: serde_json::Map<String, Value>) -> Result<String> {
    let mut doc = serde_json::Map::new();
    doc.insert("command".into(), serde_json::to_value(run.command).expect("serializable"));
    doc.insert("config".into(), serde_json::to_value(echoed_config(run)).expect("serializable"));
    doc.append(&mut body);
    let mut text = serde_json::to_string_pretty(&Value::Object(doc)).expect("serializable");
    text.push('\n');
    Ok(text)
}

fn csv_header(run: &Resolved, columns: &[String]) -> String {
    let mut out = String::new();
    let command = serde_json::to_value(run.command).expect("serializable");
    writeln!(out, "# morris-shore {}", command.as_str().unwrap_or_default()).unwrap();
    let config = serde_json::to_string_pretty(&echoed_config(run)).expect("serializable");
    for line in config.lines() {
        writeln!(out, "# {line}").unwrap();
    }
    writeln!(out, "# {}", columns.join(",")).unwrap();
    out
}

fn flags_json(run: &Resolved) -> Value {
    match run.model() {
        Some(spec) => Value::Array(
            models::special_case_flags(spec)
                .iter()
                .map(|f| Value::String(f.to_string()))
                .collect(),
        ),
        None => Value::Array(vec![]),
    }
}

fn check_transform(dec: &ms_core::MsDecomposition) -> Result<()> {
    let (unitarity, leak) = ms_core::transform_defects(dec);
    if unitarity > 1e-10 {
        return Err(Error::Contract {
            invariant: "MS transformation is unitary",
            detail: format!("|U U† - 1| = {unitarity:e}"),
        });
    }
    if leak > 1e-10 {
        return Err(Error::Contract {
            invariant: "MS couplings are rectangular-diagonal",
            detail: format!("off-diagonal coupling {leak:e}"),
        });
    }
    Ok(())
}

fn decompose(run: &Resolved) -> Result<String> {
    let sys = &run.system;
    let dec = ms_core::adapt_to_shifts(sys, &ms_core::ms_decompose(sys));
    check_transform(&dec)?;
    let h_ms = ms_core::ms_hamiltonian(sys, &dec, 0.0)?;
    let dark: Vec<Value> = ms_core::dark_states(&dec)
        .iter()
        .map(|d| {
            json!({
                "set": if d.set == LevelSet::Lower { "lower" } else { "upper" },
                "ms_index": d.ms_index,
                "vector": vector_json(&d.vector),
            })
        })
        .collect();
    let mut body = serde_json::Map::new();
    body.insert("lower_states".into(), json!(sys.lower()));
    body.insert("upper_states".into(), json!(sys.upper()));
    body.insert("rank".into(), json!(dec.rank()));
    body.insert("sigma".into(), json!(dec.sigma));
    body.insert("transform".into(), matrix_json(&dec.transform));
    body.insert("omega".into(), matrix_json(&dec.omega));
    body.insert("dark_states".into(), Value::Array(dark));
    body.insert("pairing".into(), json!(dec.pairing.order()));
    body.insert("ms_hamiltonian".into(), matrix_json(&h_ms));
    body.insert("paired_ms_hamiltonian".into(), matrix_json(&dec.pairing.apply(&h_ms)));
    body.insert("flags".into(), flags_json(run));
    json_document(run, body)
}

fn effective(run: &Resolved) -> Result<String> {
    let sys = &run.system;
    let analysis = nondegenerate::analyze(sys)?;
    check_transform(&analysis.decomposition)?;
    let eff = &analysis.effective;
    let xi = &analysis.transform.xi;
    let q: Vec<Value> = eff
        .q
        .iter()
        .map(|f| match f {
            QFactor::Scale(x) => json!(x),
            QFactor::ZeroLimit => json!("zero-limit"),
        })
        .collect();
    // a zero-limit entry acts as 1 when it adds no shift
    let q_identity = eff.q.iter().zip(&eff.qxi).zip(xi).all(|((f, qx), x)| match f {
        QFactor::Scale(s) => *s == 1.0,
        QFactor::ZeroLimit => qx == x,
    });
    let kappa = &analysis.kappa.values;
    let kappa_rows: Vec<Vec<f64>> = (0..kappa.nrows())
        .map(|i| (0..kappa.ncols()).map(|k| kappa[(i, k)]).collect())
        .collect();
    let names: Vec<&str> = sys.shifts().iter().map(|s| s.name.as_str()).collect();
    let warnings: Vec<String> = analysis.kappa.warnings.iter().map(|w| w.to_string()).collect();
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let mut body = serde_json::Map::new();
    body.insert("shift_names".into(), json!(names));
    body.insert("shift_values".into(), json!(sys.shift_values()));
    body.insert("xi".into(), json!(xi));
    body.insert("kappa".into(), json!(kappa_rows));
    body.insert("kappa_warnings".into(), json!(warnings));
    body.insert("q".into(), Value::Array(q));
    body.insert("q_is_identity".into(), json!(q_identity));
    body.insert("qxi".into(), json!(eff.qxi));
    body.insert("h_eff".into(), matrix_json(&eff.h_eff));
    body.insert("h_ms".into(), matrix_json(&eff.h_ms));
    body.insert("pairing".into(), json!(analysis.decomposition.pairing.order()));
    body.insert("paired_ms_hamiltonian".into(), matrix_json(&analysis.paired_ms_hamiltonian()));
    body.insert("flags".into(), flags_json(run));
    json_document(run, body)
}

/// Shift pattern scaled so its largest entry is r·σ_max; a pattern of ones
/// when every configured shift is zero.
pub fn scaled_shifts(sys: &BipartiteSystem, ratio: f64) -> Result<(BipartiteSystem, f64)> {
    if sys.shifts().is_empty() {
        return Err(Error::Config("a δ sweep needs at least one shift parameter".into()));
    }
    let sigma_max = linalg::svd(sys.coupling()).sigma.first().copied().unwrap_or(0.0);
    if sigma_max == 0.0 {
        return Err(Error::Config("a δ/Ω_rms sweep needs a nonzero coupling".into()));
    }
    let base = sys.shift_values();
    let peak = base.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let pattern: Vec<f64> = if peak == 0.0 {
        vec![1.0; base.len()]
    } else {
        base.iter().map(|x| x / peak).collect()
    };
    let delta = ratio * sigma_max;
    let values: Vec<f64> = pattern.iter().map(|w| w * delta).collect();
    Ok((sys.with_shift_values(&values), delta))
}

/// Exact and first-order eigenvalues, indexed like the MS layout.
pub fn eigen_pairs(sys: &BipartiteSystem) -> Result<(Vec<f64>, Vec<f64>)> {
    let static_sys = sys.snapshot(1.0);
    let analysis = nondegenerate::analyze(&static_sys)?;
    let exact = nondegenerate::exact_spectrum(&static_sys, &analysis.transform)?;
    Ok((exact.values, analysis.effective.qxi))
}

fn eigencompare(run: &Resolved) -> Result<String> {
    let range = run.config.delta_over_rms.expect("resolved");
    let columns: Vec<String> = ["delta_over_rms", "delta", "index", "exact", "approx", "abs_error"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for r in range.values() {
        let (sys, delta) = scaled_shifts(&run.system, r)?;
        let (exact, approx) = eigen_pairs(&sys)?;
        for (i, (x, a)) in exact.iter().zip(&approx).enumerate() {
            rows.push((r, delta, i, *x, *a, (x - a).abs()));
        }
    }
    match run.format {
        Format::Csv => {
            let mut out = csv_header(run, &columns);
            for (r, d, i, x, a, err) in rows {
                writeln!(out, "{},{},{i},{},{},{}", fmt_f64(r), fmt_f64(d), fmt_f64(x), fmt_f64(a), fmt_f64(err)).unwrap();
            }
            Ok(out)
        }
        Format::Json => {
            let table: Vec<Value> = rows
                .iter()
                .map(|(r, d, i, x, a, err)| {
                    json!({"delta_over_rms": r, "delta": d, "index": i, "exact": x, "approx": a, "abs_error": err})
                })
                .collect();
            let mut body = serde_json::Map::new();
            body.insert("rows".into(), Value::Array(table));
            json_document(run, body)
        }
    }
}

fn time_grid(config: &RunConfig) -> Result<TimeGrid> {
    TimeGrid::uniform(0.0, config.t_final.expect("resolved"), config.steps.expect("resolved"))
}

fn basis_state(n: usize, i: usize) -> CVector {
    let mut v = CVector::zeros(n);
    v[i] = c(1.0, 0.0);
    v
}

fn propagate(run: &Resolved) -> Result<String> {
    let grid = time_grid(&run.config)?;
    let kinds = run.config.hamiltonians.clone().expect("resolved");
    let c0 = basis_state(run.system.dim(), run.config.initial.expect("resolved"));
    let pops: Vec<Vec<Vec<f64>>> = kinds
        .iter()
        .map(|&k| dynamics::propagate(&run.system, k, &c0, &grid).map(|t| t.populations()))
        .collect::<Result<_>>()?;
    let n = run.system.dim();
    match run.format {
        Format::Csv => {
            let mut columns = vec!["t".to_string()];
            for k in &kinds {
                columns.extend((0..n).map(|i| format!("{k}_p{i}")));
            }
            let mut out = csv_header(run, &columns);
            for (ti, t) in grid.times().iter().enumerate() {
                let mut fields = vec![fmt_f64(*t)];
                for p in &pops {
                    fields.extend(p[ti].iter().map(|x| fmt_f64(*x)));
                }
                writeln!(out, "{}", fields.join(",")).unwrap();
            }
            Ok(out)
        }
        Format::Json => {
            let mut series = serde_json::Map::new();
            for (k, p) in kinds.iter().zip(&pops) {
                series.insert(k.to_string(), json!(p));
            }
            let mut body = serde_json::Map::new();
            body.insert("times".into(), json!(grid.times()));
            body.insert("populations".into(), Value::Object(series));
            json_document(run, body)
        }
    }
}

/// Least-squares slope of ln y against ln x over the points with x, y > 0.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn sweep(run: &Resolved) -> Result<String> {
    let range = run.config.delta_over_rms.expect("resolved");
    let grid = time_grid(&run.config)?;
    let c0 = basis_state(run.system.dim(), run.config.initial.expect("resolved"));
    let columns: Vec<String> = [
        "delta_over_rms",
        "delta",
        "max_population_gap",
        "final_infidelity",
        "max_eigenvalue_error",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut rows = Vec::new();
    for r in range.values() {
        let (sys, delta) = scaled_shifts(&run.system, r)?;
        let full = dynamics::propagate(&sys, HamiltonianKind::Full, &c0, &grid)?;
        let eff = dynamics::propagate(&sys, HamiltonianKind::Effective, &c0, &grid)?;
        let cmp = dynamics::compare(&full, &eff)?;
        let (exact, approx) = eigen_pairs(&sys)?;
        let eig_err = exact.iter().zip(&approx).map(|(x, a)| (x - a).abs()).fold(0.0, f64::max);
        rows.push([r, delta, cmp.max_population_gap, cmp.final_infidelity, eig_err]);
    }
    let ratios: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let slopes: Vec<(&str, Option<f64>)> = [("max_population_gap", 2), ("final_infidelity", 3), ("max_eigenvalue_error", 4)]
        .iter()
        .map(|&(name, col)| {
            let y: Vec<f64> = rows.iter().map(|r| r[col]).collect();
            (name, loglog_slope(&ratios, &y))
        })
        .collect();
    match run.format {
        Format::Csv => {
            let mut out = csv_header(run, &columns);
            for row in &rows {
                let fields: Vec<String> = row.iter().map(|x| fmt_f64(*x)).collect();
                writeln!(out, "{}", fields.join(",")).unwrap();
            }
            for (name, slope) in &slopes {
                let s = slope.map_or("nan".to_string(), fmt_f64);
                writeln!(out, "# loglog_slope {name} {s}").unwrap();
            }
            Ok(out)
        }
        Format::Json => {
            let table: Vec<Value> = rows
                .iter()
                .map(|r| {
                    json!({
                        "delta_over_rms": r[0],
                        "delta": r[1],
                        "max_population_gap": r[2],
                        "final_infidelity": r[3],
                        "max_eigenvalue_error": r[4],
                    })
                })
                .collect();
            let fitted: serde_json::Map<String, Value> =
                slopes.iter().map(|(name, s)| (name.to_string(), json!(s))).collect();
            let mut body = serde_json::Map::new();
            body.insert("rows".into(), Value::Array(table));
            body.insert("loglog_slopes".into(), Value::Object(fitted));
            json_document(run, body)
        }
    }
}

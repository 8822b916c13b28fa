mod commands;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use qsq_core::QsqError;

/// Environment variable naming the default output directory.
const OUT_DIR_VAR: &str = "QSQ_OUT_DIR";

#[derive(Parser)]
#[command(name = "qsq", version, about = "Quantum statistical query learning experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Output options shared by every subcommand. Config files may set them
/// under the keys `out` and `trace`.
#[derive(Args, Clone, Debug, Default)]
struct Common {
    /// JSON config mirroring the flags; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Report path. Defaults to `$QSQ_OUT_DIR/<subcommand>.json`, else stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Optional CSV trace path.
    #[arg(long, global = true)]
    trace: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Recover a parity with n influence queries.
    LearnParity(commands::ParityParams),
    /// Learn a k-junta by influence selection and coefficient queries.
    LearnJunta(commands::JuntaParams),
    /// List every Fourier coefficient of magnitude at least tau.
    Gl(commands::GlParams),
    /// Learn a DNF from its heavy Fourier coefficients.
    LearnDnf(commands::DnfParams),
    /// Coverage of Qstat answers simulated from measured copies.
    SimQstat(commands::SimParams),
    /// Coverage of Qstat answers simulated from noisy copies.
    SimNoisy(commands::SimParams),
    /// Weak statistical query dimension of a concept class.
    Sqdim(commands::SqdimParams),
    /// Play a parity learner against the lower-bound adversary.
    AdversaryGame(commands::GameParams),
    /// One-way communication protocol built from a query learner.
    Protocol(commands::ProtocolParams),
    /// Differentially private parity learning.
    PrivateLearn(commands::PrivateParams),
    /// Empirical privacy audit of the private average.
    DpAudit(commands::AuditParams),
    /// Dump the Fourier spectrum of a concept.
    Spectrum(commands::SpectrumParams),
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(QsqError),
}

impl From<QsqError> for CliError {
    fn from(e: QsqError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(QsqError::ContractViolation(_) | QsqError::IllegalQuery(_)) => 3,
            _ => 2,
        }
    }

    fn report(&self) -> Value {
        let (kind, message) = match self {
            CliError::Usage(m) => ("usage", m.clone()),
            CliError::Core(e @ (QsqError::ContractViolation(_) | QsqError::IllegalQuery(_))) => {
                ("contract_violation", e.to_string())
            }
            CliError::Core(e) => ("config", e.to_string()),
        };
        serde_json::json!({ "error": kind, "message": message })
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// What a subcommand hands back for writing.
pub struct Outcome {
    pub predicate: &'static str,
    pub holds: bool,
    pub result: Value,
    pub trace: Option<String>,
}

#[derive(Serialize)]
struct Report<'a> {
    command: &'a str,
    version: &'a str,
    config: Value,
    predicate: Predicate<'a>,
    result: Value,
}

#[derive(Serialize)]
struct Predicate<'a> {
    name: &'a str,
    holds: bool,
}

/// Parameter structs: every field optional so flags can overlay a config
/// file, with defaults applied afterwards.
pub trait Params: Serialize + DeserializeOwned + Clone {
    fn overlay(self, base: Self) -> Self;
    fn fill(self) -> Self;
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct OutputKeys {
    out: Option<PathBuf>,
    trace: Option<PathBuf>,
}

fn load_config(path: &Path) -> CliResult<Map<String, Value>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(CliError::Usage(format!("{}: config must be a JSON object", path.display()))),
        Err(e) => Err(CliError::Usage(format!("{}: {e}", path.display()))),
    }
}

fn resolve<P: Params>(flags: &P, common: &Common) -> CliResult<(P, Common)> {
    let mut common = common.clone();
    let Some(path) = &common.config else {
        return Ok((flags.clone().fill(), common));
    };
    let mut map = load_config(path)?;
    let keys = OutputKeys {
        out: map.remove("out").map(serde_json::from_value).transpose().map_err(|e| CliError::Usage(e.to_string()))?,
        trace: map.remove("trace").map(serde_json::from_value).transpose().map_err(|e| CliError::Usage(e.to_string()))?,
    };
    let base: P = serde_json::from_value(Value::Object(map))
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    common.out = common.out.or(keys.out);
    common.trace = common.trace.or(keys.trace);
    Ok((flags.clone().overlay(base).fill(), common))
}

fn run_command<P: Params>(
    name: &str,
    flags: &P,
    common: &Common,
    body: impl FnOnce(&P) -> CliResult<Outcome>,
) -> CliResult<bool> {
    let (params, common) = resolve(flags, common)?;
    let outcome = body(&params)?;
    let report = Report {
        command: name,
        version: env!("CARGO_PKG_VERSION"),
        config: serde_json::to_value(&params).map_err(|e| CliError::Usage(e.to_string()))?,
        predicate: Predicate { name: outcome.predicate, holds: outcome.holds },
        result: outcome.result,
    };
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Usage(e.to_string()))?;
    text.push('\n');
    let trace = match (&common.trace, outcome.trace) {
        (Some(path), Some(csv)) => Some((path.clone(), csv)),
        (Some(_), None) => return Err(CliError::Usage(format!("{name} has no CSV trace"))),
        _ => None,
    };
    let out = common.out.or_else(|| std::env::var_os(OUT_DIR_VAR).map(|d| PathBuf::from(d).join(format!("{name}.json"))));
    let write = |path: &Path, body: &str| {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
        }
        fs::write(path, body).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    };
    match out {
        Some(path) => write(&path, &text)?,
        None => print!("{text}"),
    }
    if let Some((path, csv)) = trace {
        write(&path, &csv)?;
    }
    Ok(outcome.holds)
}

fn dispatch(cli: &Cli, common: &Common) -> CliResult<bool> {
    use commands::*;
    match &cli.command {
        Command::LearnParity(p) => run_command("learn-parity", p, common, learn_parity),
        Command::LearnJunta(p) => run_command("learn-junta", p, common, learn_junta),
        Command::Gl(p) => run_command("gl", p, common, gl),
        Command::LearnDnf(p) => run_command("learn-dnf", p, common, learn_dnf),
        Command::SimQstat(p) => run_command("sim-qstat", p, common, |p| simulate(p, false)),
        Command::SimNoisy(p) => run_command("sim-noisy", p, common, |p| simulate(p, true)),
        Command::Sqdim(p) => run_command("sqdim", p, common, sqdim),
        Command::AdversaryGame(p) => run_command("adversary-game", p, common, adversary_game),
        Command::Protocol(p) => run_command("protocol", p, common, protocol),
        Command::PrivateLearn(p) => run_command("private-learn", p, common, private_learn),
        Command::DpAudit(p) => run_command("dp-audit", p, common, dp_audit),
        Command::Spectrum(p) => run_command("spectrum", p, common, spectrum),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli, &cli.common) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::from(e.exit_code())
        }
    }
}

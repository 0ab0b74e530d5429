//! Scenario files, trace files, reports and the `gridbed` command line on top
//! of [`gridbed_core`].

pub mod fixtures;
pub mod overrides;
pub mod report;
pub mod scenario;
pub mod tracefile;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde_json::Value;

use gridbed_core::testbed::{self, TestbedError};

use crate::overrides::{apply_override, OverrideError};
use crate::report::{build_report, demand_csv, wastage_csv, Report, ReportError};
use crate::scenario::{Issue, ScenarioSpec};
use crate::tracefile::{parse_trace, write_trace, TraceError};

pub const BUNDLED_PREFIX: &str = "bundled:";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{origin}: line {line}, column {column}: {message}")]
    Parse { origin: String, line: usize, column: usize, message: String },
    #[error("{}", .0.iter().map(|i| i.to_string()).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Issue>),
    #[error(transparent)]
    Override(#[from] OverrideError),
    #[error("unknown bundled scenario '{0}' (available: {names})", names = fixtures::NAMES.join(", "))]
    UnknownBundled(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Testbed(#[from] TestbedError),
    #[error("{0}")]
    Output(String),
}

impl CliError {
    /// 1 for scenario problems, 2 for everything that goes wrong afterwards.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Invalid(_) | CliError::Override(_) | CliError::UnknownBundled(_) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Scenario text from a file path or `bundled:<name>`.
pub fn read_scenario_source(source: &str) -> Result<String, CliError> {
    match source.strip_prefix(BUNDLED_PREFIX) {
        Some(name) => fixtures::bundled(name).map(String::from).ok_or_else(|| CliError::UnknownBundled(name.into())),
        None => {
            let path = Path::new(source);
            fs::read_to_string(path).map_err(io_err(path))
        }
    }
}

/// Parse, apply `--set` overrides and `--seed`, type-check and validate.
pub fn load_scenario(text: &str, origin: &str, sets: &[String], seed: Option<u64>) -> Result<ScenarioSpec, CliError> {
    let mut doc: Value = serde_json::from_str(text).map_err(|e| CliError::Parse {
        origin: origin.into(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    for s in sets {
        apply_override(&mut doc, s)?;
    }
    if let Some(seed) = seed {
        apply_override(&mut doc, &format!("seed={seed}"))?;
    }
    let spec: ScenarioSpec = serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        let path = if path == "." { String::new() } else { path };
        CliError::Invalid(vec![Issue { path, message: e.into_inner().to_string() }])
    })?;
    spec.validate().map_err(CliError::Invalid)?;
    Ok(spec)
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub trace: Vec<u8>,
    pub report: Report,
}

/// Simulate, serialise the trace, and analyse the serialised trace.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<RunArtifacts, CliError> {
    let resolved = spec.resolve().map_err(CliError::Invalid)?;
    let run = testbed::run(resolved.config)?;
    let mut trace = Vec::new();
    write_trace(&mut trace, spec, &run.events, run.dispatch_digest).map_err(io_err(Path::new("<trace>")))?;
    let report = report_from_trace(&trace)?;
    Ok(RunArtifacts { trace, report })
}

pub fn report_from_trace(raw: &[u8]) -> Result<Report, CliError> {
    let text = std::str::from_utf8(raw).map_err(|_| TraceError::Malformed { line: 0, message: "not UTF-8".into() })?;
    let parsed = parse_trace(text)?;
    Ok(build_report(&parsed, raw)?)
}

pub fn report_json(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serialises");
    s.push('\n');
    s
}

/// Write report, CSV extracts and (when given) the trace into `dir`.
pub fn write_outputs(
    dir: &Path,
    output: &scenario::OutputSpec,
    trace: Option<&[u8]>,
    report: &Report,
) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<(), CliError> {
        let p = dir.join(name);
        fs::write(&p, bytes).map_err(io_err(&p))?;
        written.push(p);
        Ok(())
    };
    if let Some(t) = trace {
        put(&output.trace, t)?;
    }
    put(&output.report, report_json(report).as_bytes())?;
    let csv_err = |e: csv::Error| CliError::Output(e.to_string());
    put(&output.demand_csv, &demand_csv(report).map_err(csv_err)?)?;
    if let Some(w) = &report.wastage {
        put(&output.wastage_csv, &wastage_csv(w).map_err(csv_err)?)?;
    }
    Ok(written)
}

//! Flat CSV tables and nested JSON reports.
//!
//! Every emitted artifact carries `SCHEMA_VERSION`. Floats are written with
//! the shortest round-trip decimal form so repeated runs with the same seed
//! produce byte-identical files.

use serde::Serialize;

use std::fs;
use std::path::{Path, PathBuf};

use crate::bounds::BoundReport;
use crate::error::{Error, Result};
use crate::estimators::RiskReport;
use crate::scenario::ConversionNote;
use crate::verification::VerificationRecord;

pub const SCHEMA_VERSION: &str = "1";

/// Which table formats a command writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
    Both,
}

impl OutputFormat {
    pub fn wants_csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }

    pub fn wants_json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "both" => Ok(OutputFormat::Both),
            other => Err(Error::Config(format!(
                "unknown format {other:?}; expected csv, json, or both"
            ))),
        }
    }
}

/// Writes through a temp file in the target directory, then renames, so a
/// crash never leaves a half-written table behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// JSON envelope shared by every report kind.
#[derive(Debug, Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: &'static str,
    kind: &'static str,
    records: &'a [T],
}

fn to_json<T: Serialize>(kind: &'static str, records: &[T]) -> Result<Vec<u8>> {
    let env = Envelope { schema_version: SCHEMA_VERSION, kind, records };
    let mut bytes = serde_json::to_vec_pretty(&env)?;
    bytes.push(b'\n');
    Ok(bytes)
}

// ---------------------------------------------------------------------------
// Bound reports.
// ---------------------------------------------------------------------------

/// One labeled bound computation, e.g. a grid point. Budgets that arrived
/// as pure-DP epsilons carry their conversion notes.
#[derive(Debug, Clone, Serialize)]
pub struct LabeledBound {
    pub scenario: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub conversions: Vec<ConversionNote>,
    #[serde(flatten)]
    pub report: BoundReport,
}

fn fmt_conversions(notes: &[ConversionNote]) -> String {
    notes
        .iter()
        .map(|c| format!("client{}:eps{}->rho{}", c.client, c.epsilon, c.rho))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn bound_csv(rows: &[LabeledBound]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "schema_version",
        "scenario",
        "variant",
        "certified",
        "param_dim",
        "value",
        "info_total",
        "prior_term",
        "harmonic_display",
        "best_p",
        "at_p_max",
        "epsilon_conversions",
    ])?;
    for row in rows {
        let r = &row.report;
        w.write_record([
            SCHEMA_VERSION.to_string(),
            row.scenario.clone(),
            r.variant.to_string(),
            r.variant.is_certified().to_string(),
            r.param_dim.to_string(),
            r.value.to_string(),
            r.info_total.to_string(),
            r.prior_term.to_string(),
            fmt_opt(r.harmonic_display),
            fmt_opt(r.best_p),
            r.at_p_max.to_string(),
            fmt_conversions(&row.conversions),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Serialization(e.to_string()))
}

pub fn bound_json(rows: &[LabeledBound]) -> Result<Vec<u8>> {
    to_json("bound_report", rows)
}

// ---------------------------------------------------------------------------
// Verification records.
// ---------------------------------------------------------------------------

pub fn verification_csv(rows: &[VerificationRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "schema_version",
        "claim",
        "protocol",
        "theta",
        "n",
        "rho",
        "m",
        "trials",
        "estimate",
        "se",
        "bound",
        "slack",
        "passed",
    ])?;
    for r in rows {
        w.write_record([
            SCHEMA_VERSION.to_string(),
            r.claim.to_string(),
            r.protocol.clone(),
            r.theta.to_string(),
            r.n.to_string(),
            r.rho.to_string(),
            r.m.to_string(),
            r.trials.to_string(),
            r.estimate.to_string(),
            r.se.to_string(),
            r.bound.to_string(),
            r.slack.to_string(),
            r.passed.to_string(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Serialization(e.to_string()))
}

pub fn verification_json(rows: &[VerificationRecord]) -> Result<Vec<u8>> {
    to_json("verification_report", rows)
}

// ---------------------------------------------------------------------------
// Risk reports.
// ---------------------------------------------------------------------------

/// One risk measurement labeled with its scenario.
#[derive(Debug, Clone, Serialize)]
pub struct LabeledRisk {
    pub scenario: String,
    #[serde(flatten)]
    pub report: RiskReport,
}

pub fn risk_csv(rows: &[LabeledRisk]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "schema_version",
        "scenario",
        "estimator",
        "risk",
        "se",
        "trials",
        "bound",
        "bound_certified",
        "margin",
        "passed",
        "clip_tau",
        "clip_tau2",
    ])?;
    for row in rows {
        let r = &row.report;
        w.write_record([
            SCHEMA_VERSION.to_string(),
            row.scenario.clone(),
            r.estimator.to_string(),
            r.risk.to_string(),
            r.se.to_string(),
            r.trials.to_string(),
            r.bound.to_string(),
            r.bound_certified.to_string(),
            r.margin.to_string(),
            r.passed.to_string(),
            r.clips.tau.to_string(),
            r.clips.tau2.to_string(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Serialization(e.to_string()))
}

pub fn risk_json(rows: &[LabeledRisk]) -> Result<Vec<u8>> {
    to_json("risk_report", rows)
}

// ---------------------------------------------------------------------------
// Mechanism audits.
// ---------------------------------------------------------------------------

/// One mechanism audit labeled with the mechanism and client shape.
#[derive(Debug, Clone, Serialize)]
pub struct LabeledAudit {
    pub mechanism: String,
    pub client_n: usize,
    #[serde(flatten)]
    pub audit: crate::privacy::MechanismAudit,
}

pub fn audit_csv(rows: &[LabeledAudit]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "schema_version",
        "mechanism",
        "client_n",
        "claimed_rho",
        "max_excess",
        "tolerance",
        "passed",
    ])?;
    for row in rows {
        w.write_record([
            SCHEMA_VERSION.to_string(),
            row.mechanism.clone(),
            row.client_n.to_string(),
            row.audit.claimed_rho.rho().to_string(),
            row.audit.max_excess.to_string(),
            row.audit.tolerance.to_string(),
            row.audit.passed.to_string(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Serialization(e.to_string()))
}

pub fn audit_json(rows: &[LabeledAudit]) -> Result<Vec<u8>> {
    to_json("audit_report", rows)
}

/// Writes `stem.csv` / `stem.json` under `dir` per the requested format and
/// returns the paths written.
pub fn emit(
    dir: &Path,
    stem: &str,
    format: OutputFormat,
    csv_bytes: Option<Vec<u8>>,
    json_bytes: Option<Vec<u8>>,
) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if format.wants_csv() {
        let bytes = csv_bytes
            .ok_or_else(|| Error::InvalidInput("csv requested but not rendered".into()))?;
        let path = dir.join(format!("{stem}.csv"));
        write_atomic(&path, &bytes)?;
        written.push(path);
    }
    if format.wants_json() {
        let bytes = json_bytes
            .ok_or_else(|| Error::InvalidInput("json requested but not rendered".into()))?;
        let path = dir.join(format!("{stem}.json"));
        write_atomic(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}

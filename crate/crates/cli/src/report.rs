//! Report document and its rendering.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use effect_core::fit::{CovarianceKind, FittedModel};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

pub const REPORT_VERSION: &str = "1.0.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub report_version: String,
    pub metadata: Metadata,
    pub models: Vec<ModelSummary>,
    pub results: Vec<QueryResult>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub engine_version: String,
    pub input_sha256: String,
    pub config_sha256: String,
    pub seed: u64,
    pub mvn_tol: f64,
    pub generated_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub id: String,
    /// `ols`, `bayes`, or `flat_prior`.
    pub kind: String,
    pub covariance_kind: Option<CovarianceKind>,
    pub n: usize,
    pub dof: i64,
    pub clusters: Option<usize>,
    pub labels: Vec<String>,
    pub beta: Vec<Option<f64>>,
    pub std_errors: Vec<Option<f64>>,
}

impl ModelSummary {
    pub fn new(id: String, kind: &str, model: &FittedModel, warnings: &mut Vec<String>) -> Self {
        let mut finite = |xs: Vec<f64>, what: &str| -> Vec<Option<f64>> {
            xs.into_iter()
                .enumerate()
                .map(|(i, x)| {
                    if x.is_finite() {
                        Some(x)
                    } else {
                        warnings.push(format!("model {id}: {what}[{i}] is not finite"));
                        None
                    }
                })
                .collect()
        };
        let beta = finite(model.beta.iter().copied().collect(), "beta");
        let std_errors = finite(model.std_errors(), "std_errors");
        ModelSummary {
            kind: kind.to_string(),
            covariance_kind: model.covariance_kind,
            n: model.n,
            dof: model.dof,
            clusters: model.clusters,
            labels: model.schema.labels(),
            beta,
            std_errors,
            id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    /// `validation` or `numeric`.
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub index: usize,
    #[serde(rename = "type")]
    pub kind: String,
    pub arms: Vec<String>,
    pub predicate: Option<String>,
    pub status: Status,
    pub model: Option<String>,
    pub result: Option<Value>,
    pub error: Option<ErrorRecord>,
    pub warnings: Vec<String>,
}

/// Records a warning for each named value that is not finite. Such values
/// serialize as JSON null.
pub fn flag_non_finite(values: &[(&str, f64)], warnings: &mut Vec<String>) {
    for (name, x) in values {
        if !x.is_finite() {
            warnings.push(format!("{name} is not finite; reported as null"));
        }
    }
}

pub fn to_json(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn to_text(report: &Report) -> String {
    let mut out = String::new();
    let m = &report.metadata;
    let _ = writeln!(
        out,
        "effect-engine {} report (format {})",
        m.engine_version, report.report_version
    );
    let _ = writeln!(out, "input  sha256 {}", m.input_sha256);
    let _ = writeln!(out, "config sha256 {}", m.config_sha256);
    for model in &report.models {
        let _ = writeln!(
            out,
            "\nmodel {} (n = {}, dof = {})",
            model.id, model.n, model.dof
        );
        for ((l, b), se) in model.labels.iter().zip(&model.beta).zip(&model.std_errors) {
            let _ = writeln!(out, "  {l:<28} {:>14} {:>14}", num(*b), num(*se));
        }
    }
    for r in &report.results {
        let _ = write!(out, "\n[{}] {} {}", r.index, r.kind, r.arms.join(" vs "));
        if let Some(p) = &r.predicate {
            let _ = write!(out, " where {p}");
        }
        let _ = writeln!(out);
        match (&r.result, &r.error) {
            (Some(v), _) => {
                for line in serde_json::to_string_pretty(v).unwrap_or_default().lines() {
                    let _ = writeln!(out, "  {line}");
                }
            }
            (None, Some(e)) => {
                let _ = writeln!(out, "  error ({}): {}", e.kind, e.message);
            }
            _ => {}
        }
        for w in &r.warnings {
            let _ = writeln!(out, "  warning: {w}");
        }
    }
    if !report.warnings.is_empty() {
        let _ = writeln!(out, "\nwarnings:");
        for w in &report.warnings {
            let _ = writeln!(out, "  {w}");
        }
    }
    out
}

fn num(x: Option<f64>) -> String {
    x.map_or_else(|| "null".into(), |v| format!("{v:.6}"))
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(contents.as_bytes())
        .map_err(|e| CliError::io(tmp.path(), e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| CliError::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

//! JSON query configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use effect_core::data::{Dataset, Predicate};
use effect_core::design::Encoding;
use effect_core::fit::{BayesPrior, CovarianceKind};
use effect_core::ranking::OrthantOptions;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::input::ColumnMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryConfig {
    pub data: ColumnMap,
    pub model: ModelConfig,
    pub queries: Vec<Query>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub mvn_tol: f64,
    /// Record per-query failures in the report instead of aborting.
    #[serde(default)]
    pub partial: bool,
}

fn default_tol() -> f64 {
    OrthantOptions::default().tol
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub reference_arm: String,
    #[serde(default, alias = "covariance")]
    pub covariance_kind: CovarianceKind,
    #[serde(default)]
    pub encodings: BTreeMap<String, Encoding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bayes: Option<BayesConfig>,
}

/// A scalar broadcast to every coefficient, or one value per coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrVec {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BayesConfig {
    #[serde(default = "zero")]
    pub prior_mean: ScalarOrVec,
    /// Isotropic prior variance, or per-coefficient variances.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_variance: Option<ScalarOrVec>,
    /// Full prior covariance; overrides `prior_variance`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_covariance: Option<Vec<Vec<f64>>>,
    pub noise_variance: f64,
}

fn zero() -> ScalarOrVec {
    ScalarOrVec::Scalar(0.0)
}

impl BayesConfig {
    /// Materializes the prior for a design with `p` columns.
    pub fn prior(&self, p: usize) -> Result<BayesPrior> {
        let sized = |v: &ScalarOrVec, what: &str| -> Result<DVector<f64>> {
            match v {
                ScalarOrVec::Scalar(s) => Ok(DVector::from_element(p, *s)),
                ScalarOrVec::Vector(xs) if xs.len() == p => Ok(DVector::from_column_slice(xs)),
                ScalarOrVec::Vector(xs) => Err(CliError::Validation(format!(
                    "{what} has {} entries but the design has {p} columns",
                    xs.len()
                ))),
            }
        };
        let prior_mean = sized(&self.prior_mean, "bayes.prior_mean")?;
        let prior_covariance = match (&self.prior_covariance, &self.prior_variance) {
            (Some(rows), _) => {
                if rows.len() != p || rows.iter().any(|r| r.len() != p) {
                    return Err(CliError::Validation(format!(
                        "bayes.prior_covariance must be {p}x{p}"
                    )));
                }
                DMatrix::from_fn(p, p, |i, j| rows[i][j])
            }
            (None, Some(v)) => DMatrix::from_diagonal(&sized(v, "bayes.prior_variance")?),
            (None, None) => {
                return Err(CliError::Validation(
                    "bayes block needs prior_variance or prior_covariance".into(),
                ))
            }
        };
        Ok(BayesPrior {
            prior_mean,
            prior_covariance,
            noise_variance: self.noise_variance,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryType {
    Ate,
    Cate,
    Hte,
    Dte,
    Relative,
    Rank,
}

impl QueryType {
    pub fn as_str(self) -> &'static str {
        match self {
            QueryType::Ate => "ate",
            QueryType::Cate => "cate",
            QueryType::Hte => "hte",
            QueryType::Dte => "dte",
            QueryType::Relative => "relative",
            QueryType::Rank => "rank",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Query {
    #[serde(rename = "type")]
    pub kind: QueryType,
    /// `[arm_to, arm_from]` for effect queries; the arms to rank (default
    /// all) for `rank`.
    #[serde(default)]
    pub arms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periods: Option<Vec<i64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_level: Option<f64>,
    /// Overrides the model covariance for this query.
    #[serde(default, alias = "covariance", skip_serializing_if = "Option::is_none")]
    pub covariance_kind: Option<CovarianceKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Text,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

impl QueryConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let cfg: QueryConfig = serde_json::from_slice(bytes)
            .map_err(|e| CliError::Validation(format!("config: {e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok((Self::from_json(&bytes)?, bytes))
    }

    /// Checks that need only the config.
    pub fn check(&self) -> Result<()> {
        let bad = |i: usize, msg: String| Err(CliError::Validation(format!("query {i}: {msg}")));
        if self.queries.is_empty() {
            return Err(CliError::Validation("config has no queries".into()));
        }
        if !(self.mvn_tol > 0.0 && self.mvn_tol.is_finite()) {
            return Err(CliError::Validation("mvn_tol must be positive".into()));
        }
        if let Some(b) = &self.model.bayes {
            if !(b.noise_variance > 0.0 && b.noise_variance.is_finite()) {
                return Err(CliError::Validation(
                    "bayes.noise_variance must be positive".into(),
                ));
            }
        }
        for (i, q) in self.queries.iter().enumerate() {
            if q.kind == QueryType::Rank {
                if q.arms.len() == 1 {
                    return bad(i, "rank needs at least two arms".into());
                }
            } else if q.arms.len() != 2 {
                return bad(
                    i,
                    format!("{} needs arms [arm_to, arm_from]", q.kind.as_str()),
                );
            }
            if let Some(l) = q.ci_level {
                if !(l > 0.0 && l < 1.0) {
                    return bad(i, format!("ci_level must be in (0, 1), got {l}"));
                }
            }
            if let Some(p) = &q.predicate {
                Predicate::parse(p).map_err(|e| CliError::Validation(format!("query {i}: {e}")))?;
            }
            match q.kind {
                QueryType::Cate | QueryType::Hte if q.predicate.is_none() => {
                    return bad(i, format!("{} needs a predicate", q.kind.as_str()));
                }
                QueryType::Dte if self.data.unit_id.is_none() || self.data.period.is_none() => {
                    return bad(i, "dte needs unit_id and period column mappings".into());
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Checks against the loaded data.
    pub fn check_data(&self, data: &Dataset) -> Result<()> {
        let arms = data.arms();
        if !arms.contains(&self.model.reference_arm) {
            return Err(CliError::Validation(format!(
                "reference arm `{}` does not appear in the data",
                self.model.reference_arm
            )));
        }
        for (i, q) in self.queries.iter().enumerate() {
            for a in &q.arms {
                if !arms.contains(a) {
                    return Err(CliError::Validation(format!(
                        "query {i}: unknown arm `{a}`"
                    )));
                }
            }
            if let Some(p) = &q.predicate {
                let pred = Predicate::parse(p)
                    .map_err(|e| CliError::Validation(format!("query {i}: {e}")))?;
                pred.check_columns(data)
                    .map_err(|e| CliError::Validation(format!("query {i}: {e}")))?;
            }
        }
        Ok(())
    }

    pub fn orthant_options(&self, seed: u64) -> OrthantOptions {
        OrthantOptions {
            tol: self.mvn_tol,
            seed,
            ..OrthantOptions::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let cfg = QueryConfig::from_json(
            br#"{"data":{"outcome":"y","arm":"w"},"model":{"reference_arm":"0","covariance":"classical"},
                "queries":[{"type":"ate","arms":["1","0"]}]}"#,
        )
        .unwrap();
        assert_eq!(cfg.model.covariance_kind, CovarianceKind::Classical);
        assert_eq!(cfg.mvn_tol, 5e-4);
        assert_eq!(cfg.output.format, OutputFormat::Json);
    }

    #[test]
    fn rejects_bad_queries() {
        for q in [
            r#"{"type":"ate","arms":["1"]}"#,
            r#"{"type":"cate","arms":["1","0"]}"#,
            r#"{"type":"dte","arms":["1","0"],"periods":[1]}"#,
            r#"{"type":"ate","arms":["1","0"],"ci_level":1.5}"#,
            r#"{"type":"ate","arms":["1","0"],"predicate":"x ~ 3"}"#,
            r#"{"type":"nope","arms":["1","0"]}"#,
        ] {
            let text = format!(
                r#"{{"data":{{"outcome":"y","arm":"w"}},"model":{{"reference_arm":"0"}},"queries":[{q}]}}"#
            );
            assert!(QueryConfig::from_json(text.as_bytes()).is_err(), "{q}");
        }
    }

    #[test]
    fn prior_shapes() {
        let b = BayesConfig {
            prior_mean: ScalarOrVec::Vector(vec![1.0, 2.0]),
            prior_variance: Some(ScalarOrVec::Scalar(4.0)),
            prior_covariance: None,
            noise_variance: 1.0,
        };
        let p = b.prior(2).unwrap();
        assert_eq!(p.prior_covariance[(1, 1)], 4.0);
        assert_eq!(p.prior_mean[1], 2.0);
        assert!(b.prior(3).is_err());
    }
}

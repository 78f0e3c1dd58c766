//! Interacted design matrix `[1 | X | W | X·W]`.
//!
//! Columns are laid out as: intercept, the expanded covariate block (numeric
//! passthrough or one-hot with a dropped reference level), one indicator per
//! non-reference arm, then the interaction block ordered covariate-major
//! (for each covariate column, one product per arm column).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{CovariateValue, Dataset, Record, PERIOD_COLUMN};
use crate::error::{EngineError, Result};
use crate::fit::{BayesPrior, CovarianceKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Numeric,
    Categorical,
}

/// How to encode and fit a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub reference_arm: String,
    /// Per-covariate overrides. Columns without an entry are numeric when
    /// every value is numeric and categorical otherwise.
    pub encodings: BTreeMap<String, Encoding>,
    /// Include the `X·W` block. Always on for normal use.
    pub interactions: bool,
    /// Encode the period (when the data has two or more) as a categorical
    /// covariate named `period`.
    pub encode_period: bool,
    pub covariance_kind: CovarianceKind,
    pub bayes: Option<BayesPrior>,
}

impl ModelSpec {
    pub fn new(reference_arm: impl Into<String>) -> Self {
        ModelSpec {
            reference_arm: reference_arm.into(),
            encodings: BTreeMap::new(),
            interactions: true,
            encode_period: true,
            covariance_kind: CovarianceKind::default(),
            bayes: None,
        }
    }

    pub fn with_covariance(mut self, kind: CovarianceKind) -> Self {
        self.covariance_kind = kind;
        self
    }

    pub fn with_encoding(mut self, name: &str, enc: Encoding) -> Self {
        self.encodings.insert(name.to_string(), enc);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CovariateSource {
    Column(usize),
    Period,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovariateEncoding {
    Numeric {
        name: String,
        source: CovariateSource,
    },
    OneHot {
        name: String,
        source: CovariateSource,
        reference: String,
        /// Retained levels, in column order.
        levels: Vec<String>,
    },
}

impl CovariateEncoding {
    pub fn name(&self) -> &str {
        match self {
            CovariateEncoding::Numeric { name, .. } | CovariateEncoding::OneHot { name, .. } => {
                name
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateColumn {
    pub name: String,
    pub level: Option<String>,
}

impl fmt::Display for CovariateColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.level {
            Some(l) => write!(f, "{}={}", self.name, l),
            None => write!(f, "{}", self.name),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Column {
    Intercept,
    Covariate(CovariateColumn),
    Arm(String),
    Interaction(CovariateColumn, String),
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Column::Intercept => write!(f, "(intercept)"),
            Column::Covariate(c) => write!(f, "{c}"),
            Column::Arm(a) => write!(f, "arm[{a}]"),
            Column::Interaction(c, a) => write!(f, "{c}:arm[{a}]"),
        }
    }
}

/// Binds coefficient positions to design-matrix columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    covariates: Vec<CovariateEncoding>,
    covariate_columns: Vec<CovariateColumn>,
    reference_arm: String,
    arms: Vec<String>,
    interactions: bool,
}

impl ColumnSchema {
    pub fn new(
        covariates: Vec<CovariateEncoding>,
        reference_arm: String,
        arms: Vec<String>,
        interactions: bool,
    ) -> Self {
        let covariate_columns = covariates
            .iter()
            .flat_map(|enc| match enc {
                CovariateEncoding::Numeric { name, .. } => vec![CovariateColumn {
                    name: name.clone(),
                    level: None,
                }],
                CovariateEncoding::OneHot { name, levels, .. } => levels
                    .iter()
                    .map(|l| CovariateColumn {
                        name: name.clone(),
                        level: Some(l.clone()),
                    })
                    .collect(),
            })
            .collect();
        ColumnSchema {
            covariates,
            covariate_columns,
            reference_arm,
            arms,
            interactions,
        }
    }

    pub fn covariate_encodings(&self) -> &[CovariateEncoding] {
        &self.covariates
    }

    pub fn covariate_columns(&self) -> &[CovariateColumn] {
        &self.covariate_columns
    }

    pub fn reference_arm(&self) -> &str {
        &self.reference_arm
    }

    /// Non-reference arms, in column order.
    pub fn arm_columns(&self) -> &[String] {
        &self.arms
    }

    /// All arms, reference first.
    pub fn all_arms(&self) -> Vec<String> {
        std::iter::once(self.reference_arm.clone())
            .chain(self.arms.iter().cloned())
            .collect()
    }

    pub fn has_interactions(&self) -> bool {
        self.interactions
    }

    pub fn covariate_width(&self) -> usize {
        self.covariate_columns.len()
    }

    pub fn covariate_offset(&self) -> usize {
        1
    }

    pub fn arm_offset(&self) -> usize {
        1 + self.covariate_width()
    }

    pub fn interaction_offset(&self) -> usize {
        self.arm_offset() + self.arms.len()
    }

    /// Column of the product of covariate column `c` and arm column `a`.
    pub fn interaction_index(&self, c: usize, a: usize) -> usize {
        debug_assert!(self.interactions);
        self.interaction_offset() + c * self.arms.len() + a
    }

    /// Number of coefficients.
    pub fn len(&self) -> usize {
        let k = self.covariate_width();
        let a = self.arms.len();
        1 + k + a + if self.interactions { k * a } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Position of `arm` among the arm columns; `None` for the reference arm.
    pub fn arm_position(&self, arm: &str) -> Result<Option<usize>> {
        if arm == self.reference_arm {
            return Ok(None);
        }
        self.arms
            .iter()
            .position(|a| a == arm)
            .map(Some)
            .ok_or_else(|| EngineError::UnknownArm(arm.to_string()))
    }

    /// One-hot arm block for `arm` (all zeros for the reference).
    pub fn arm_indicator(&self, arm: &str) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.arms.len()];
        if let Some(i) = self.arm_position(arm)? {
            v[i] = 1.0;
        }
        Ok(v)
    }

    pub fn columns(&self) -> Vec<Column> {
        let mut cols = Vec::with_capacity(self.len());
        cols.push(Column::Intercept);
        cols.extend(
            self.covariate_columns
                .iter()
                .cloned()
                .map(Column::Covariate),
        );
        cols.extend(self.arms.iter().cloned().map(Column::Arm));
        if self.interactions {
            for c in &self.covariate_columns {
                for a in &self.arms {
                    cols.push(Column::Interaction(c.clone(), a.clone()));
                }
            }
        }
        cols
    }

    pub fn labels(&self) -> Vec<String> {
        self.columns().iter().map(ToString::to_string).collect()
    }

    /// Expanded covariate block for one row.
    pub fn expand_covariates(&self, row: &Record) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.covariate_width());
        for enc in &self.covariates {
            match enc {
                CovariateEncoding::Numeric { source, .. } => {
                    let v = match source {
                        CovariateSource::Column(i) => {
                            row.covariates[*i].as_f64().unwrap_or(f64::NAN)
                        }
                        CovariateSource::Period => row.period.map_or(f64::NAN, |p| p as f64),
                    };
                    out.push(v);
                }
                CovariateEncoding::OneHot { source, levels, .. } => {
                    let label = match source {
                        CovariateSource::Column(i) => row.covariates[*i].level_label(),
                        CovariateSource::Period => {
                            row.period.map(|p| p.to_string()).unwrap_or_default()
                        }
                    };
                    out.extend(levels.iter().map(|l| if *l == label { 1.0 } else { 0.0 }));
                }
            }
        }
        out
    }

    /// Full design row `[1, x, w, x⊗w]`.
    pub fn design_row(&self, row: &Record) -> Result<Vec<f64>> {
        let x = self.expand_covariates(row);
        let w = self.arm_indicator(&row.arm)?;
        let mut out = Vec::with_capacity(self.len());
        out.push(1.0);
        out.extend_from_slice(&x);
        out.extend_from_slice(&w);
        if self.interactions {
            for xv in &x {
                out.extend(w.iter().map(|wv| xv * wv));
            }
        }
        Ok(out)
    }
}

/// Design matrix, response, and schema, plus non-fatal warnings.
#[derive(Debug, Clone)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub schema: ColumnSchema,
    pub warnings: Vec<String>,
}

fn sort_levels(values: &[&CovariateValue]) -> Vec<String> {
    let all_numeric = values.iter().all(|v| v.as_f64().is_some());
    if all_numeric {
        let mut nums: Vec<f64> = values.iter().filter_map(|v| v.as_f64()).collect();
        nums.sort_by(f64::total_cmp);
        nums.dedup();
        nums.into_iter().map(|v| format!("{v}")).collect()
    } else {
        let set: BTreeSet<String> = values.iter().map(|v| v.level_label()).collect();
        set.into_iter().collect()
    }
}

/// Builds the interacted design matrix for `data` under `spec`.
pub fn build_design(data: &Dataset, spec: &ModelSpec) -> Result<Design> {
    if data.is_empty() {
        return Err(EngineError::InvalidDataset("no rows".into()));
    }
    let arms = data.arms();
    if !arms.contains(&spec.reference_arm) {
        return Err(EngineError::UnknownReferenceArm(spec.reference_arm.clone()));
    }
    for name in spec.encodings.keys() {
        if data.covariate_index(name).is_none() {
            return Err(EngineError::InvalidArgument(format!(
                "encoding given for unknown covariate `{name}`"
            )));
        }
    }

    let mut warnings = Vec::new();
    let mut encodings = Vec::new();
    for (i, name) in data.covariate_names().iter().enumerate() {
        let values: Vec<&CovariateValue> = data.rows().iter().map(|r| &r.covariates[i]).collect();
        let any_level = values.iter().any(|v| v.as_f64().is_none());
        let enc = match spec.encodings.get(name) {
            Some(e) => *e,
            None if any_level => Encoding::Categorical,
            None => Encoding::Numeric,
        };
        match enc {
            Encoding::Numeric => {
                if any_level {
                    return Err(EngineError::InvalidDataset(format!(
                        "covariate `{name}` has non-numeric values but numeric encoding was requested"
                    )));
                }
                let first = values[0].as_f64();
                if values.iter().all(|v| v.as_f64() == first) {
                    warnings.push(format!(
                        "covariate `{name}` is constant across all rows; the design is likely rank deficient"
                    ));
                }
                encodings.push(CovariateEncoding::Numeric {
                    name: name.clone(),
                    source: CovariateSource::Column(i),
                });
            }
            Encoding::Categorical => {
                let levels = sort_levels(&values);
                if levels.len() < 2 {
                    return Err(EngineError::SingleLevelCategorical(name.clone()));
                }
                encodings.push(CovariateEncoding::OneHot {
                    name: name.clone(),
                    source: CovariateSource::Column(i),
                    reference: levels[0].clone(),
                    levels: levels[1..].to_vec(),
                });
            }
        }
    }

    let periods = data.periods();
    if spec.encode_period && periods.len() >= 2 {
        if data.covariate_index(PERIOD_COLUMN).is_some() {
            return Err(EngineError::InvalidDataset(format!(
                "covariate name `{PERIOD_COLUMN}` collides with the period column"
            )));
        }
        let levels: Vec<String> = periods.iter().map(|p| p.to_string()).collect();
        encodings.push(CovariateEncoding::OneHot {
            name: PERIOD_COLUMN.to_string(),
            source: CovariateSource::Period,
            reference: levels[0].clone(),
            levels: levels[1..].to_vec(),
        });
    }

    let arm_cols: Vec<String> = arms
        .iter()
        .filter(|a| **a != spec.reference_arm)
        .cloned()
        .collect();
    let schema = ColumnSchema::new(
        encodings,
        spec.reference_arm.clone(),
        arm_cols,
        spec.interactions,
    );

    let n = data.len();
    let p = schema.len();
    let mut x = DMatrix::zeros(n, p);
    for (i, row) in data.rows().iter().enumerate() {
        for (j, v) in schema.design_row(row)?.into_iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    let y = DVector::from_vec(data.outcomes());
    Ok(Design {
        x,
        y,
        schema,
        warnings,
    })
}

//! Experiment data and row predicates.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};

/// A single covariate cell: numeric, or a categorical level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovariateValue {
    Numeric(f64),
    Level(String),
}

impl CovariateValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            CovariateValue::Numeric(v) => Some(*v),
            CovariateValue::Level(_) => None,
        }
    }

    /// Level label used when the value is one-hot encoded.
    pub fn level_label(&self) -> String {
        match self {
            CovariateValue::Numeric(v) => format!("{v}"),
            CovariateValue::Level(s) => s.clone(),
        }
    }
}

impl From<f64> for CovariateValue {
    fn from(v: f64) -> Self {
        CovariateValue::Numeric(v)
    }
}

impl From<&str> for CovariateValue {
    fn from(v: &str) -> Self {
        CovariateValue::Level(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub outcome: f64,
    pub arm: String,
    /// Aligned with [`Dataset::covariate_names`].
    pub covariates: Vec<CovariateValue>,
    pub unit_id: Option<String>,
    pub period: Option<i64>,
}

/// Tabular experiment data: outcome, arm label, covariates, and optional
/// unit id / period for repeated-measures designs.
///
/// Rows store covariate values positionally; every row carries the same
/// covariate set by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    covariate_names: Vec<String>,
    rows: Vec<Record>,
}

impl Dataset {
    pub fn new(covariate_names: Vec<String>, rows: Vec<Record>) -> Result<Self> {
        let unique: BTreeSet<&str> = covariate_names.iter().map(String::as_str).collect();
        if unique.len() != covariate_names.len() {
            return Err(EngineError::InvalidDataset(
                "duplicate covariate names".into(),
            ));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.covariates.len() != covariate_names.len() {
                return Err(EngineError::InvalidDataset(format!(
                    "row {i} has {} covariates, expected {}",
                    row.covariates.len(),
                    covariate_names.len()
                )));
            }
            if !row.outcome.is_finite() {
                return Err(EngineError::InvalidDataset(format!(
                    "row {i}: outcome is not finite"
                )));
            }
            for (name, v) in covariate_names.iter().zip(&row.covariates) {
                if let CovariateValue::Numeric(x) = v {
                    if !x.is_finite() {
                        return Err(EngineError::InvalidDataset(format!(
                            "row {i}: covariate `{name}` is not finite"
                        )));
                    }
                }
            }
        }
        let ds = Dataset {
            covariate_names,
            rows,
        };
        if ds.arms().len() < 2 {
            return Err(EngineError::InvalidDataset(
                "need at least two distinct arms".into(),
            ));
        }
        let with_unit = ds.rows.iter().filter(|r| r.unit_id.is_some()).count();
        let with_period = ds.rows.iter().filter(|r| r.period.is_some()).count();
        if (with_unit != 0 && with_unit != ds.rows.len())
            || (with_period != 0 && with_period != ds.rows.len())
        {
            return Err(EngineError::InvalidDataset(
                "unit_id and period must be present on every row or on none".into(),
            ));
        }
        Ok(ds)
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn rows(&self) -> &[Record] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    /// Distinct arm labels in lexicographic order.
    pub fn arms(&self) -> BTreeSet<String> {
        self.rows.iter().map(|r| r.arm.clone()).collect()
    }

    /// Distinct periods in ascending order (empty when the data has no period).
    pub fn periods(&self) -> BTreeSet<i64> {
        self.rows.iter().filter_map(|r| r.period).collect()
    }

    pub fn has_periods(&self) -> bool {
        self.rows.first().is_some_and(|r| r.period.is_some())
    }

    pub fn has_unit_ids(&self) -> bool {
        self.rows.first().is_some_and(|r| r.unit_id.is_some())
    }

    /// Cluster ids for each row, or `None` when the data has no unit ids.
    pub fn unit_ids(&self) -> Option<Vec<String>> {
        self.rows.iter().map(|r| r.unit_id.clone()).collect()
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.outcome).collect()
    }
}

/// Name under which predicates address the period column.
pub const PERIOD_COLUMN: &str = "period";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompareOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CompareOp {
    fn symbol(self) -> &'static str {
        match self {
            CompareOp::Eq => "==",
            CompareOp::Ne => "!=",
            CompareOp::Lt => "<",
            CompareOp::Le => "<=",
            CompareOp::Gt => ">",
            CompareOp::Ge => ">=",
        }
    }

    fn holds(self, ord: Ordering) -> bool {
        match self {
            CompareOp::Eq => ord == Ordering::Equal,
            CompareOp::Ne => ord != Ordering::Equal,
            CompareOp::Lt => ord == Ordering::Less,
            CompareOp::Le => ord != Ordering::Greater,
            CompareOp::Gt => ord == Ordering::Greater,
            CompareOp::Ge => ord != Ordering::Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub column: String,
    pub op: CompareOp,
    /// Raw literal text, unquoted.
    pub literal: String,
}

/// Conjunction of `column OP literal` conditions. The empty conjunction
/// selects every row.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Predicate {
    pub conditions: Vec<Condition>,
}

impl Predicate {
    pub fn all() -> Self {
        Predicate::default()
    }

    pub fn single(column: &str, op: CompareOp, literal: impl fmt::Display) -> Self {
        Predicate {
            conditions: vec![Condition {
                column: column.to_string(),
                op,
                literal: literal.to_string(),
            }],
        }
    }

    pub fn is_all(&self) -> bool {
        self.conditions.is_empty()
    }

    /// Parses `x >= 3 && grade == "4"`. Conjunctions may be written `&&` or
    /// `and`; literals may be bare or quoted with `"` or `'`.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.is_empty() || text == "true" || text == "*" {
            return Ok(Predicate::all());
        }
        let mut conditions = Vec::new();
        for part in split_conjunction(text) {
            conditions.push(parse_condition(part.trim())?);
        }
        Ok(Predicate { conditions })
    }

    /// Evaluates the predicate on a row. Errors on unknown columns or
    /// ordering comparisons against categorical levels.
    pub fn matches(&self, data: &Dataset, row: &Record) -> Result<bool> {
        for cond in &self.conditions {
            if !eval_condition(cond, data, row)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Validates column references without evaluating on rows.
    pub fn check_columns(&self, data: &Dataset) -> Result<()> {
        for cond in &self.conditions {
            if cond.column == PERIOD_COLUMN && data.has_periods() {
                continue;
            }
            if data.covariate_index(&cond.column).is_none() {
                return Err(EngineError::InvalidPredicate(format!(
                    "unknown column `{}`",
                    cond.column
                )));
            }
        }
        Ok(())
    }

    /// Row mask for `data`, negated when `complement` is set.
    pub fn mask(&self, data: &Dataset, complement: bool) -> Result<Vec<bool>> {
        self.check_columns(data)?;
        data.rows()
            .iter()
            .map(|r| self.matches(data, r).map(|m| m != complement))
            .collect()
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.conditions.is_empty() {
            return write!(f, "true");
        }
        let parts: Vec<String> = self
            .conditions
            .iter()
            .map(|c| format!("{} {} {}", c.column, c.op.symbol(), c.literal))
            .collect();
        write!(f, "{}", parts.join(" && "))
    }
}

fn split_conjunction(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for chunk in text.split("&&") {
        // " and " is accepted as a synonym, case-insensitive.
        let mut rest = chunk;
        loop {
            let lower = rest.to_ascii_lowercase();
            match lower.find(" and ") {
                Some(pos) => {
                    out.push(&rest[..pos]);
                    rest = &rest[pos + 5..];
                }
                None => {
                    out.push(rest);
                    break;
                }
            }
        }
    }
    out
}

fn parse_condition(text: &str) -> Result<Condition> {
    const OPS: [(&str, CompareOp); 6] = [
        ("==", CompareOp::Eq),
        ("!=", CompareOp::Ne),
        ("<=", CompareOp::Le),
        (">=", CompareOp::Ge),
        ("<", CompareOp::Lt),
        (">", CompareOp::Gt),
    ];
    for (sym, op) in OPS {
        if let Some(pos) = text.find(sym) {
            let column = text[..pos].trim();
            let literal = text[pos + sym.len()..].trim();
            if column.is_empty() || literal.is_empty() {
                break;
            }
            if literal.contains(['<', '>', '=', '!']) {
                return Err(EngineError::InvalidPredicate(format!(
                    "malformed condition `{text}`"
                )));
            }
            let literal = ['"', '\'']
                .iter()
                .find_map(|q| literal.strip_prefix(*q).and_then(|l| l.strip_suffix(*q)))
                .unwrap_or(literal);
            return Ok(Condition {
                column: column.to_string(),
                op,
                literal: literal.to_string(),
            });
        }
    }
    Err(EngineError::InvalidPredicate(format!(
        "expected `column OP literal`, got `{text}`"
    )))
}

fn parse_number(cond: &Condition) -> Result<f64> {
    cond.literal.parse::<f64>().map_err(|_| {
        EngineError::InvalidPredicate(format!(
            "column `{}` is numeric but literal `{}` is not",
            cond.column, cond.literal
        ))
    })
}

fn eval_condition(cond: &Condition, data: &Dataset, row: &Record) -> Result<bool> {
    if cond.column == PERIOD_COLUMN && data.has_periods() {
        let lit = parse_number(cond)?;
        let v = row.period.ok_or(EngineError::MissingPeriod)? as f64;
        return Ok(cond.op.holds(v.total_cmp(&lit)));
    }
    let idx = data.covariate_index(&cond.column).ok_or_else(|| {
        EngineError::InvalidPredicate(format!("unknown column `{}`", cond.column))
    })?;
    match &row.covariates[idx] {
        CovariateValue::Numeric(v) => {
            let lit = parse_number(cond)?;
            Ok(cond.op.holds(v.total_cmp(&lit)))
        }
        CovariateValue::Level(s) => match cond.op {
            CompareOp::Eq => Ok(*s == cond.literal),
            CompareOp::Ne => Ok(*s != cond.literal),
            _ => Err(EngineError::InvalidPredicate(format!(
                "ordering comparison on categorical column `{}`",
                cond.column
            ))),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(y: f64, arm: &str, covs: Vec<CovariateValue>) -> Record {
        Record {
            outcome: y,
            arm: arm.into(),
            covariates: covs,
            unit_id: None,
            period: None,
        }
    }

    fn sample() -> Dataset {
        Dataset::new(
            vec!["x".into(), "g".into()],
            vec![
                rec(1.0, "0", vec![1.0.into(), "a".into()]),
                rec(2.0, "1", vec![2.0.into(), "b".into()]),
                rec(3.0, "0", vec![3.0.into(), "a".into()]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn rejects_single_arm_and_nonfinite() {
        let err = Dataset::new(vec![], vec![rec(1.0, "a", vec![]), rec(2.0, "a", vec![])]);
        assert!(matches!(err, Err(EngineError::InvalidDataset(_))));
        let err = Dataset::new(
            vec![],
            vec![rec(f64::NAN, "a", vec![]), rec(2.0, "b", vec![])],
        );
        assert!(matches!(err, Err(EngineError::InvalidDataset(_))));
    }

    #[test]
    fn parses_conjunctions() {
        let p = Predicate::parse("x >= 2 && g == \"a\"").unwrap();
        assert_eq!(p.conditions.len(), 2);
        assert_eq!(p.conditions[0].op, CompareOp::Ge);
        assert_eq!(p.conditions[1].literal, "a");
        let p = Predicate::parse("x > 1 and g != b").unwrap();
        assert_eq!(p.conditions.len(), 2);
        assert_eq!(p.to_string(), "x > 1 && g != b");
        assert_eq!(
            Predicate::parse("g == 'a b'").unwrap().conditions[0].literal,
            "a b"
        );
        assert!(Predicate::parse("true").unwrap().is_all());
        assert!(Predicate::parse("x 3").is_err());
        assert!(Predicate::parse("x >= ").is_err());
    }

    #[test]
    fn evaluates_masks() {
        let d = sample();
        let p = Predicate::parse("x >= 2").unwrap();
        assert_eq!(p.mask(&d, false).unwrap(), vec![false, true, true]);
        assert_eq!(p.mask(&d, true).unwrap(), vec![true, false, false]);
        let p = Predicate::parse("g == a && x < 3").unwrap();
        assert_eq!(p.mask(&d, false).unwrap(), vec![true, false, false]);
        assert!(Predicate::parse("g < a").unwrap().mask(&d, false).is_err());
        assert!(Predicate::parse("zz == 1")
            .unwrap()
            .mask(&d, false)
            .is_err());
        assert!(Predicate::parse("x == foo")
            .unwrap()
            .mask(&d, false)
            .is_err());
    }
}

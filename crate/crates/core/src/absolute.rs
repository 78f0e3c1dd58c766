//! Average, conditional, heterogeneous, and time-dynamic treatment effects.
//!
//! Each query builds a delta vector (or a difference of two) at a covariate
//! profile and applies it to the fitted coefficients. Subset profiles are the
//! column means of the expanded covariates over the selected rows; the
//! heterogeneity contrast compares a subset against its complement.

use serde::{Deserialize, Serialize};

use crate::data::{CompareOp, Dataset, Predicate, PERIOD_COLUMN};
use crate::design::CovariateEncoding;
use crate::error::{EngineError, Result};
use crate::fit::{CovarianceKind, FittedModel};
use crate::normal::two_sided_z;
use crate::vectors::{apply, delta_vector, profile_from_subset, EffectVector};

pub const DEFAULT_CI_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    Ate,
    Cate,
    Hte,
    Dte,
    Relative,
    Rank,
    Positive,
}

/// What produced an estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDescriptor {
    pub kind: QueryKind,
    pub arm_to: String,
    pub arm_from: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicate: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_level: f64,
    pub query: QueryDescriptor,
}

impl EffectEstimate {
    pub fn new(estimate: f64, variance: f64, query: QueryDescriptor) -> Self {
        let std_error = variance.max(0.0).sqrt();
        let mut e = EffectEstimate {
            estimate,
            std_error,
            ci_low: estimate,
            ci_high: estimate,
            ci_level: DEFAULT_CI_LEVEL,
            query,
        };
        e.set_level(DEFAULT_CI_LEVEL);
        e
    }

    fn set_level(&mut self, level: f64) {
        let half = two_sided_z(level) * self.std_error;
        self.ci_level = level;
        self.ci_low = self.estimate - half;
        self.ci_high = self.estimate + half;
    }

    /// Same estimate with a normal-quantile interval at `level` in (0, 1).
    pub fn at_level(mut self, level: f64) -> Result<Self> {
        if !(level > 0.0 && level < 1.0) {
            return Err(EngineError::InvalidArgument(format!(
                "confidence level must be in (0, 1), got {level}"
            )));
        }
        self.set_level(level);
        Ok(self)
    }

    pub fn variance(&self) -> f64 {
        self.std_error * self.std_error
    }
}

fn estimate_from(
    vec: &EffectVector,
    model: &FittedModel,
    query: QueryDescriptor,
) -> Result<EffectEstimate> {
    let (value, var) = apply(vec, model)?;
    Ok(EffectEstimate::new(value, var, query))
}

fn check_arms(model: &FittedModel, arm_to: &str, arm_from: &str) -> Result<()> {
    if arm_to == arm_from {
        return Err(EngineError::IdenticalArms(arm_to.to_string()));
    }
    model.schema.arm_position(arm_to)?;
    model.schema.arm_position(arm_from)?;
    Ok(())
}

/// Delta vector at the profile of the rows selected by `predicate`.
pub fn conditional_delta(
    model: &FittedModel,
    data: &Dataset,
    arm_to: &str,
    arm_from: &str,
    predicate: &Predicate,
    complement: bool,
) -> Result<EffectVector> {
    check_arms(model, arm_to, arm_from)?;
    let profile = profile_from_subset(data, &model.schema, predicate, complement)?;
    delta_vector(&model.schema, &profile, arm_to, arm_from)
}

/// Heterogeneity contrast `D(subset) − D(complement)`.
pub fn hte_vector(
    model: &FittedModel,
    data: &Dataset,
    arm_to: &str,
    arm_from: &str,
    predicate: &Predicate,
) -> Result<EffectVector> {
    let inside = conditional_delta(model, data, arm_to, arm_from, predicate, false)?;
    let outside = conditional_delta(model, data, arm_to, arm_from, predicate, true)?;
    inside.minus(&outside)
}

/// Average treatment effect of `arm_to` relative to `arm_from`, at the
/// global covariate means.
pub fn ate(
    model: &FittedModel,
    data: &Dataset,
    arm_to: &str,
    arm_from: &str,
) -> Result<EffectEstimate> {
    let d = conditional_delta(model, data, arm_to, arm_from, &Predicate::all(), false)?;
    estimate_from(
        &d,
        model,
        QueryDescriptor {
            kind: QueryKind::Ate,
            arm_to: arm_to.into(),
            arm_from: arm_from.into(),
            predicate: None,
            period: None,
        },
    )
}

/// Effect at the covariate means of the rows matching `predicate`.
pub fn cate(
    model: &FittedModel,
    data: &Dataset,
    arm_to: &str,
    arm_from: &str,
    predicate: &Predicate,
) -> Result<EffectEstimate> {
    let d = conditional_delta(model, data, arm_to, arm_from, predicate, false)?;
    estimate_from(
        &d,
        model,
        QueryDescriptor {
            kind: QueryKind::Cate,
            arm_to: arm_to.into(),
            arm_from: arm_from.into(),
            predicate: Some(predicate.to_string()),
            period: None,
        },
    )
}

/// CATE(subset) − CATE(complement), with the variance of the full contrast
/// vector (not a combination of the two CATE standard errors).
pub fn hte(
    model: &FittedModel,
    data: &Dataset,
    arm_to: &str,
    arm_from: &str,
    predicate: &Predicate,
) -> Result<EffectEstimate> {
    let c = hte_vector(model, data, arm_to, arm_from, predicate)?;
    estimate_from(
        &c,
        model,
        QueryDescriptor {
            kind: QueryKind::Hte,
            arm_to: arm_to.into(),
            arm_from: arm_from.into(),
            predicate: Some(predicate.to_string()),
            period: None,
        },
    )
}

/// Per-period effects. The model must carry cluster-robust covariance, and,
/// when the data spans several periods, encode period as a covariate.
pub fn dte(
    model: &FittedModel,
    data: &Dataset,
    arm_to: &str,
    arm_from: &str,
    periods: &[i64],
) -> Result<Vec<EffectEstimate>> {
    if model.covariance_kind != Some(CovarianceKind::Cluster) {
        return Err(EngineError::DteRequiresCluster);
    }
    if !data.has_periods() {
        return Err(EngineError::MissingPeriod);
    }
    if !data.has_unit_ids() {
        return Err(EngineError::MissingClusterIds);
    }
    let known = data.periods();
    let encoded = model
        .schema
        .covariate_encodings()
        .iter()
        .any(|e| matches!(e, CovariateEncoding::OneHot { name, .. } if name == PERIOD_COLUMN));
    if known.len() >= 2 && !encoded {
        return Err(EngineError::InvalidArgument(
            "model was built without a period encoding".into(),
        ));
    }
    periods
        .iter()
        .map(|&t| {
            if !known.contains(&t) {
                return Err(EngineError::UnknownPeriod(t));
            }
            let pred = Predicate::single(PERIOD_COLUMN, CompareOp::Eq, t);
            let d = conditional_delta(model, data, arm_to, arm_from, &pred, false)?;
            estimate_from(
                &d,
                model,
                QueryDescriptor {
                    kind: QueryKind::Dte,
                    arm_to: arm_to.into(),
                    arm_from: arm_from.into(),
                    predicate: Some(pred.to_string()),
                    period: Some(t),
                },
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Record;
    use crate::design::{build_design, ModelSpec};
    use crate::fit::fit_ols;
    use approx::assert_abs_diff_eq;

    fn four_row() -> Dataset {
        let rows = [(1.0, "0"), (3.0, "0"), (4.0, "1"), (6.0, "1")]
            .iter()
            .map(|(y, a)| Record {
                outcome: *y,
                arm: a.to_string(),
                covariates: vec![],
                unit_id: None,
                period: None,
            })
            .collect();
        Dataset::new(vec![], rows).unwrap()
    }

    fn classical(data: &Dataset) -> FittedModel {
        let d = build_design(data, &ModelSpec::new("0")).unwrap();
        fit_ols(&d, CovarianceKind::Classical, None).unwrap()
    }

    #[test]
    fn four_row_ate() {
        let data = four_row();
        let m = classical(&data);
        let e = ate(&m, &data, "1", "0").unwrap();
        assert_abs_diff_eq!(e.estimate, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.std_error, 2f64.sqrt(), epsilon = 1e-12);
        assert!(e.ci_low <= e.estimate && e.estimate <= e.ci_high);
        assert_abs_diff_eq!(
            e.ci_high - e.ci_low,
            2.0 * 1.959963984540054 * e.std_error,
            epsilon = 1e-12
        );
        let r = ate(&m, &data, "0", "1").unwrap();
        assert_eq!(r.estimate, -e.estimate);
        assert_eq!(r.std_error, e.std_error);
        assert_eq!(
            ate(&m, &data, "1", "1").unwrap_err(),
            EngineError::IdenticalArms("1".into())
        );
    }

    #[test]
    fn ci_level_is_configurable() {
        let data = four_row();
        let m = classical(&data);
        let e = ate(&m, &data, "1", "0").unwrap().at_level(0.90).unwrap();
        assert_abs_diff_eq!(
            e.ci_high - e.estimate,
            1.6448536269514722 * 2f64.sqrt(),
            epsilon = 1e-12
        );
        assert!(ate(&m, &data, "1", "0").unwrap().at_level(1.0).is_err());
    }

    #[test]
    fn no_covariate_cate_equals_ate() {
        let data = four_row();
        let m = classical(&data);
        let a = ate(&m, &data, "1", "0").unwrap();
        // Any predicate on a covariate-free dataset must refer to a column; use the empty one.
        let c = cate(&m, &data, "1", "0", &Predicate::all()).unwrap();
        assert_eq!(a.estimate, c.estimate);
        assert_eq!(a.std_error, c.std_error);
    }

    #[test]
    fn dte_requires_cluster_covariance() {
        let rows = (0..8)
            .map(|i| Record {
                outcome: i as f64,
                arm: if (i / 2) % 2 == 0 {
                    "0".into()
                } else {
                    "1".into()
                },
                covariates: vec![],
                unit_id: Some(format!("u{}", i / 2)),
                period: Some(1 + (i % 2) as i64),
            })
            .collect();
        let data = Dataset::new(vec![], rows).unwrap();
        let d = build_design(&data, &ModelSpec::new("0")).unwrap();
        let m = fit_ols(&d, CovarianceKind::Hc1, None).unwrap();
        assert_eq!(
            dte(&m, &data, "1", "0", &[1]).unwrap_err(),
            EngineError::DteRequiresCluster
        );
        let ids = data.unit_ids().unwrap();
        let m = fit_ols(&d, CovarianceKind::Cluster, Some(&ids)).unwrap();
        assert_eq!(
            dte(&m, &data, "1", "0", &[9]).unwrap_err(),
            EngineError::UnknownPeriod(9)
        );
        assert_eq!(dte(&m, &data, "1", "0", &[1, 2]).unwrap().len(), 2);
    }
}

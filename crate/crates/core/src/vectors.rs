//! Baseline and delta vectors.
//!
//! A baseline vector `B(w) = [1, x̄, e_w, x̄ ⊗ e_w]` turns `β̂` into the
//! model-implied mean outcome under arm `w` at covariate profile `x̄`. A delta
//! vector `D(w₂, w₁) = [0, 0, e_{w₂} − e_{w₁}, x̄ ⊗ (e_{w₂} − e_{w₁})]` turns it
//! into a treatment effect. Every effect query in this crate reduces to one of
//! these (or a linear combination) applied to `(β̂, Cov(β̂))`.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Predicate};
use crate::design::ColumnSchema;
use crate::error::{EngineError, Result};
use crate::fit::FittedModel;
use crate::linalg::{bilinear, dot};

/// Values for the expanded covariate block of a schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateProfile {
    values: Vec<f64>,
}

impl CovariateProfile {
    pub fn new(schema: &ColumnSchema, values: Vec<f64>) -> Result<Self> {
        if values.len() != schema.covariate_width() {
            return Err(EngineError::DimensionMismatch {
                expected: schema.covariate_width(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::NonFinite("covariate profile".into()));
        }
        Ok(CovariateProfile { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Column means of the expanded covariates over rows matching `predicate`
/// (or its complement). An all-rows predicate yields the global means.
pub fn profile_from_subset(
    data: &Dataset,
    schema: &ColumnSchema,
    predicate: &Predicate,
    complement: bool,
) -> Result<CovariateProfile> {
    let mask = predicate.mask(data, complement)?;
    let k = schema.covariate_width();
    let mut sums = vec![0.0; k];
    let mut count = 0usize;
    for (row, keep) in data.rows().iter().zip(&mask) {
        if !keep {
            continue;
        }
        count += 1;
        for (s, v) in sums.iter_mut().zip(schema.expand_covariates(row)) {
            *s += v;
        }
    }
    if count == 0 {
        let side = if complement { "complement of " } else { "" };
        return Err(EngineError::EmptySubset(format!("{side}`{predicate}`")));
    }
    let n = count as f64;
    CovariateProfile::new(schema, sums.into_iter().map(|s| s / n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EffectKind {
    Baseline {
        arm: String,
    },
    Delta {
        arm_to: String,
        arm_from: String,
    },
    /// Linear combination of other vectors, e.g. a heterogeneity contrast.
    Contrast,
}

/// A row vector aligned with a [`ColumnSchema`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectVector {
    pub entries: Vec<f64>,
    pub kind: EffectKind,
    pub profile: Option<CovariateProfile>,
}

impl EffectVector {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `self − other`, tagged as a contrast.
    pub fn minus(&self, other: &EffectVector) -> Result<EffectVector> {
        if self.len() != other.len() {
            return Err(EngineError::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(EffectVector {
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(a, b)| a - b)
                .collect(),
            kind: EffectKind::Contrast,
            profile: None,
        })
    }

    /// Linear combination `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &EffectVector, b: f64) -> Result<EffectVector> {
        if self.len() != other.len() {
            return Err(EngineError::DimensionMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(EffectVector {
            entries: self
                .entries
                .iter()
                .zip(&other.entries)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            kind: EffectKind::Contrast,
            profile: None,
        })
    }
}

fn check_profile(schema: &ColumnSchema, profile: &CovariateProfile) -> Result<()> {
    if profile.values.len() != schema.covariate_width() {
        return Err(EngineError::DimensionMismatch {
            expected: schema.covariate_width(),
            got: profile.values.len(),
        });
    }
    Ok(())
}

pub fn baseline_vector(
    schema: &ColumnSchema,
    profile: &CovariateProfile,
    arm: &str,
) -> Result<EffectVector> {
    check_profile(schema, profile)?;
    let w = schema.arm_indicator(arm)?;
    let mut entries = Vec::with_capacity(schema.len());
    entries.push(1.0);
    entries.extend_from_slice(&profile.values);
    entries.extend_from_slice(&w);
    if schema.has_interactions() {
        for x in &profile.values {
            entries.extend(w.iter().map(|wi| x * wi));
        }
    }
    Ok(EffectVector {
        entries,
        kind: EffectKind::Baseline {
            arm: arm.to_string(),
        },
        profile: Some(profile.clone()),
    })
}

/// Delta vector from the closed form; leading blocks are exactly zero.
pub fn delta_vector(
    schema: &ColumnSchema,
    profile: &CovariateProfile,
    arm_to: &str,
    arm_from: &str,
) -> Result<EffectVector> {
    check_profile(schema, profile)?;
    if arm_to == arm_from {
        return Err(EngineError::IdenticalArms(arm_to.to_string()));
    }
    let to = schema.arm_indicator(arm_to)?;
    let from = schema.arm_indicator(arm_from)?;
    let dw: Vec<f64> = to.iter().zip(&from).map(|(a, b)| a - b).collect();
    let mut entries = vec![0.0; schema.arm_offset()];
    entries.extend_from_slice(&dw);
    if schema.has_interactions() {
        for x in &profile.values {
            entries.extend(dw.iter().map(|d| x * d));
        }
    }
    Ok(EffectVector {
        entries,
        kind: EffectKind::Delta {
            arm_to: arm_to.to_string(),
            arm_from: arm_from.to_string(),
        },
        profile: Some(profile.clone()),
    })
}

/// Tolerance for clamping tiny negative quadratic forms to zero.
pub const NEGATIVE_VARIANCE_TOL: f64 = 1e-12;

/// Applies `v` to a fit: `(vᵀβ̂, vᵀ Cov(β̂) v)`.
pub fn apply(vec: &EffectVector, model: &FittedModel) -> Result<(f64, f64)> {
    if vec.len() != model.p() {
        return Err(EngineError::DimensionMismatch {
            expected: model.p(),
            got: vec.len(),
        });
    }
    let value = dot(&vec.entries, model.beta.as_slice());
    let var = bilinear(&vec.entries, &model.cov_beta, &vec.entries);
    let var = clamp_variance(var)?;
    Ok((value, var))
}

/// `uᵀ Cov(β̂) v`.
pub fn covariance(u: &EffectVector, v: &EffectVector, model: &FittedModel) -> Result<f64> {
    for vec in [u, v] {
        if vec.len() != model.p() {
            return Err(EngineError::DimensionMismatch {
                expected: model.p(),
                got: vec.len(),
            });
        }
    }
    Ok(bilinear(&u.entries, &model.cov_beta, &v.entries))
}

pub(crate) fn clamp_variance(var: f64) -> Result<f64> {
    if !var.is_finite() {
        return Err(EngineError::NonFinite("variance".into()));
    }
    if var < 0.0 {
        if var < -NEGATIVE_VARIANCE_TOL {
            log::warn!("negative quadratic form {var:e} clamped to zero");
        }
        return Ok(0.0);
    }
    Ok(var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CompareOp, Record};
    use crate::design::{build_design, Encoding, ModelSpec};
    use nalgebra::{DMatrix, DVector};

    fn rec(y: f64, arm: &str, covs: Vec<crate::data::CovariateValue>) -> Record {
        Record {
            outcome: y,
            arm: arm.into(),
            covariates: covs,
            unit_id: None,
            period: None,
        }
    }

    fn x_data() -> Dataset {
        Dataset::new(
            vec!["x".into()],
            vec![
                rec(1.0, "0", vec![1.0.into()]),
                rec(2.0, "1", vec![2.0.into()]),
                rec(3.0, "0", vec![3.0.into()]),
                rec(4.0, "1", vec![4.0.into()]),
            ],
        )
        .unwrap()
    }

    fn schema_of(data: &Dataset, spec: &ModelSpec) -> ColumnSchema {
        build_design(data, spec).unwrap().schema
    }

    #[test]
    fn subset_profiles() {
        let d = x_data();
        let s = schema_of(&d, &ModelSpec::new("0"));
        let all = profile_from_subset(&d, &s, &Predicate::all(), false).unwrap();
        assert_eq!(all.values(), &[2.5]);
        let ge3 = Predicate::single("x", CompareOp::Ge, 3);
        assert_eq!(
            profile_from_subset(&d, &s, &ge3, false).unwrap().values(),
            &[3.5]
        );
        assert_eq!(
            profile_from_subset(&d, &s, &ge3, true).unwrap().values(),
            &[1.5]
        );
        let none = Predicate::single("x", CompareOp::Gt, 10);
        assert!(matches!(
            profile_from_subset(&d, &s, &none, false),
            Err(EngineError::EmptySubset(_))
        ));
        let every = Predicate::single("x", CompareOp::Gt, 0);
        assert!(profile_from_subset(&d, &s, &every, true).is_err());
    }

    #[test]
    fn categorical_profile_is_level_indicator() {
        let grades = [3.0, 4.0, 5.0, 4.0, 3.0, 5.0];
        let rows = grades
            .iter()
            .enumerate()
            .map(|(i, g)| {
                rec(
                    i as f64,
                    if i % 2 == 0 { "0" } else { "1" },
                    vec![(*g).into()],
                )
            })
            .collect();
        let d = Dataset::new(vec!["grade".into()], rows).unwrap();
        let s = schema_of(
            &d,
            &ModelSpec::new("0").with_encoding("grade", Encoding::Categorical),
        );
        let p = profile_from_subset(&d, &s, &Predicate::single("grade", CompareOp::Eq, 4), false)
            .unwrap();
        assert_eq!(p.values(), &[1.0, 0.0]);
    }

    #[test]
    fn baseline_and_delta_examples() {
        let d = x_data();
        let s = schema_of(&d, &ModelSpec::new("0"));
        let prof = CovariateProfile::new(&s, vec![2.0]).unwrap();
        assert_eq!(
            baseline_vector(&s, &prof, "0").unwrap().entries,
            vec![1.0, 2.0, 0.0, 0.0]
        );
        assert_eq!(
            baseline_vector(&s, &prof, "1").unwrap().entries,
            vec![1.0, 2.0, 1.0, 2.0]
        );
        assert_eq!(
            delta_vector(&s, &prof, "1", "0").unwrap().entries,
            vec![0.0, 0.0, 1.0, 2.0]
        );
        assert_eq!(
            delta_vector(&s, &prof, "0", "1").unwrap().entries,
            vec![0.0, 0.0, -1.0, -2.0]
        );
        assert_eq!(
            delta_vector(&s, &prof, "1", "1").unwrap_err(),
            EngineError::IdenticalArms("1".into())
        );
        assert_eq!(
            baseline_vector(&s, &prof, "7").unwrap_err(),
            EngineError::UnknownArm("7".into())
        );
    }

    #[test]
    fn three_arm_blocks() {
        let rows = (0..6)
            .map(|i| rec(i as f64, ["1", "2", "3"][i % 3], vec![(i as f64).into()]))
            .collect();
        let d = Dataset::new(vec!["x".into()], rows).unwrap();
        let s = schema_of(&d, &ModelSpec::new("1"));
        let prof = CovariateProfile::new(&s, vec![0.75]).unwrap();
        let b = baseline_vector(&s, &prof, "2").unwrap();
        assert_eq!(b.entries, vec![1.0, 0.75, 1.0, 0.0, 0.75, 0.0]);
        let b = baseline_vector(&s, &prof, "3").unwrap();
        assert_eq!(&b.entries[2..4], &[0.0, 1.0]);
        assert_eq!(&b.entries[4..], &[0.0, 0.75]);
        let dv = delta_vector(&s, &prof, "2", "3").unwrap();
        assert_eq!(&dv.entries[2..4], &[1.0, -1.0]);
    }

    #[test]
    fn apply_quadratic_form() {
        let d = Dataset::new(
            vec![],
            vec![
                rec(1.0, "0", vec![]),
                rec(2.0, "1", vec![]),
                rec(3.0, "1", vec![]),
            ],
        )
        .unwrap();
        let schema = schema_of(&d, &ModelSpec::new("0"));
        let model = FittedModel {
            schema: schema.clone(),
            beta: DVector::from_vec(vec![2.0, 3.0]),
            cov_beta: DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 2.0]),
            n: 4,
            dof: 2,
            covariance_kind: None,
            clusters: None,
            posterior: false,
        };
        let prof = CovariateProfile::new(&schema, vec![]).unwrap();
        let dv = delta_vector(&schema, &prof, "1", "0").unwrap();
        assert_eq!(apply(&dv, &model).unwrap(), (3.0, 2.0));
        let bv = baseline_vector(&schema, &prof, "0").unwrap();
        assert_eq!(apply(&bv, &model).unwrap(), (2.0, 1.0));
        let zero = dv.combine(0.0, &bv, 0.0).unwrap();
        assert_eq!(apply(&zero, &model).unwrap(), (0.0, 0.0));
        let mut short = dv.clone();
        short.entries.pop();
        assert!(matches!(
            apply(&short, &model),
            Err(EngineError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn clamps_rounding_negatives() {
        assert_eq!(clamp_variance(-1e-13).unwrap(), 0.0);
        assert_eq!(clamp_variance(0.5).unwrap(), 0.5);
        assert!(clamp_variance(f64::NAN).is_err());
    }
}

//! Average relative effect via second-order delta-method ratio moments.
//!
//! With `R = Dᵀβ̂` (the absolute effect) and `S = B(w₁)ᵀβ̂` (the baseline of
//! the comparison arm), the relative effect is `R/S`. `R` and `S` share
//! coefficients, so `Cov(R, S) = Dᵀ Cov(β̂) B` is generally nonzero.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Predicate};
use crate::error::{EngineError, Result};
use crate::fit::FittedModel;
use crate::vectors::{apply, baseline_vector, covariance, delta_vector, profile_from_subset};

/// Default `k` in the validity guard `|E(S)| > k·sd(S)`.
pub const DEFAULT_GUARD: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioComponents {
    pub er: f64,
    pub es: f64,
    pub var_r: f64,
    pub var_s: f64,
    pub cov_rs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioEstimate {
    /// Second-order corrected `E(R/S)`; the canonical estimate.
    pub are: f64,
    pub variance: f64,
    /// Plain `E(R)/E(S)`.
    pub first_order: f64,
    pub components: RatioComponents,
    pub arm_to: String,
    pub arm_from: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicate: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
}

impl RatioEstimate {
    pub fn std_error(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Second-order Taylor moments of `R/S`:
///
/// ```text
/// E(R/S)   ≈ ER/ES − Cov(R,S)/ES² + Var(S)·ER/ES³
/// Var(R/S) ≈ Var(R)/ES² − 2·ER·Cov(R,S)/ES³ + ER²·Var(S)/ES⁴
/// ```
///
/// The variance is the expanded form of
/// `(ER/ES)²·[Var(R)/ER² − 2Cov(R,S)/(ER·ES) + Var(S)/ES²]`, which stays finite
/// at `ER = 0`. Returns the unclamped variance.
pub fn ratio_moments(er: f64, es: f64, var_r: f64, var_s: f64, cov_rs: f64) -> Result<(f64, f64)> {
    if es == 0.0 {
        return Err(EngineError::RatioGuard {
            es,
            sd: var_s.max(0.0).sqrt(),
        });
    }
    let es2 = es * es;
    let es3 = es2 * es;
    let expectation = er / es - cov_rs / es2 + var_s * er / es3;
    let variance = var_r / es2 - 2.0 * er * cov_rs / es3 + er * er * var_s / (es2 * es2);
    Ok((expectation, variance))
}

/// Relative effect of `arm_to` versus `arm_from`, evaluated at the global
/// covariate means or at the means of a predicate subset.
pub fn relative_effect(
    model: &FittedModel,
    data: &Dataset,
    arm_to: &str,
    arm_from: &str,
    predicate: Option<&Predicate>,
) -> Result<RatioEstimate> {
    relative_effect_with_guard(model, data, arm_to, arm_from, predicate, DEFAULT_GUARD)
}

pub fn relative_effect_with_guard(
    model: &FittedModel,
    data: &Dataset,
    arm_to: &str,
    arm_from: &str,
    predicate: Option<&Predicate>,
    guard: f64,
) -> Result<RatioEstimate> {
    let all = Predicate::all();
    let pred = predicate.unwrap_or(&all);
    let profile = profile_from_subset(data, &model.schema, pred, false)?;
    let d = delta_vector(&model.schema, &profile, arm_to, arm_from)?;
    let b = baseline_vector(&model.schema, &profile, arm_from)?;
    let (er, var_r) = apply(&d, model)?;
    let (es, var_s) = apply(&b, model)?;
    let cov_rs = covariance(&d, &b, model)?;

    let sd_s = var_s.sqrt();
    if es == 0.0 || es.abs() <= guard * sd_s {
        return Err(EngineError::RatioGuard { es, sd: sd_s });
    }
    let (are, raw_var) = ratio_moments(er, es, var_r, var_s, cov_rs)?;
    let mut warnings = Vec::new();
    let variance = if raw_var < 0.0 {
        warnings.push(format!(
            "negative ratio variance {raw_var:e} clamped to zero"
        ));
        0.0
    } else {
        raw_var
    };
    Ok(RatioEstimate {
        are,
        variance,
        first_order: er / es,
        components: RatioComponents {
            er,
            es,
            var_r,
            var_s,
            cov_rs,
        },
        arm_to: arm_to.into(),
        arm_from: arm_from.into(),
        predicate: predicate.filter(|p| !p.is_all()).map(ToString::to_string),
        warnings,
    })
}

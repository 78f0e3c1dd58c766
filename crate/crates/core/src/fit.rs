//! Least-squares and conjugate-normal fits of the interacted model.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::design::{build_design, ColumnSchema, Design, ModelSpec};
use crate::error::{EngineError, Result};
use crate::linalg::{check_symmetric, least_squares, spd_inverse, symmetrize};

/// Estimator used for `Cov(β̂)` in least-squares fits.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    /// `σ̂²(XᵀX)⁻¹`, `σ̂² = RSS/(n − p)`.
    Classical,
    /// White sandwich with the `n/(n − p)` correction.
    #[default]
    Hc1,
    /// Liang–Zeger sandwich over unit ids with `G/(G−1)·(n−1)/(n−p)` correction.
    Cluster,
}

/// Normal prior `β ~ N(m₀, S₀)` with known noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesPrior {
    pub prior_mean: DVector<f64>,
    pub prior_covariance: DMatrix<f64>,
    pub noise_variance: f64,
}

impl BayesPrior {
    /// Prior `N(mean·1, variance·I)` sized to `p` coefficients.
    pub fn isotropic(p: usize, mean: f64, variance: f64, noise_variance: f64) -> Self {
        BayesPrior {
            prior_mean: DVector::from_element(p, mean),
            prior_covariance: DMatrix::identity(p, p) * variance,
            noise_variance,
        }
    }
}

/// Coefficients and their covariance, bound to a column schema. Immutable
/// once built.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub schema: ColumnSchema,
    pub beta: DVector<f64>,
    pub cov_beta: DMatrix<f64>,
    pub n: usize,
    pub dof: i64,
    /// `None` for posterior fits.
    pub covariance_kind: Option<CovarianceKind>,
    /// Number of clusters for cluster-robust fits.
    pub clusters: Option<usize>,
    /// True when `beta`/`cov_beta` are a normal posterior mean/covariance.
    pub posterior: bool,
}

impl FittedModel {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn std_errors(&self) -> Vec<f64> {
        self.cov_beta
            .diagonal()
            .iter()
            .map(|v| v.max(0.0).sqrt())
            .collect()
    }

    /// Reinterprets a least-squares fit as the posterior under a flat prior.
    pub fn into_flat_prior_posterior(mut self) -> Self {
        self.posterior = true;
        self
    }
}

/// Ordinary least squares with the requested covariance estimator.
/// `cluster_ids` is required (one per row) for [`CovarianceKind::Cluster`].
pub fn fit_ols(
    design: &Design,
    kind: CovarianceKind,
    cluster_ids: Option<&[String]>,
) -> Result<FittedModel> {
    let x = &design.x;
    let y = &design.y;
    let (n, p) = x.shape();
    if y.len() != n {
        return Err(EngineError::DimensionMismatch {
            expected: n,
            got: y.len(),
        });
    }
    if n <= p {
        return Err(EngineError::TooFewRows { n, p });
    }
    let ls = least_squares(x, y, &design.schema.labels())?;
    let resid = y - x * &ls.beta;
    let dof = (n - p) as f64;

    let mut clusters = None;
    let cov = match kind {
        CovarianceKind::Classical => {
            let rss = resid.norm_squared();
            &ls.xtx_inv * (rss / dof)
        }
        CovarianceKind::Hc1 => {
            let mut scores = x.clone();
            for (i, e) in resid.iter().enumerate() {
                scores.row_mut(i).scale_mut(*e);
            }
            let meat = scores.transpose() * &scores;
            (&ls.xtx_inv * meat * &ls.xtx_inv) * (n as f64 / dof)
        }
        CovarianceKind::Cluster => {
            let ids = cluster_ids.ok_or(EngineError::MissingClusterIds)?;
            if ids.len() != n {
                return Err(EngineError::DimensionMismatch {
                    expected: n,
                    got: ids.len(),
                });
            }
            // Sum scores per cluster; BTreeMap keeps accumulation order independent of row order
            // up to reassociation within a cluster.
            let mut sums: BTreeMap<&str, DVector<f64>> = BTreeMap::new();
            for (i, id) in ids.iter().enumerate() {
                let s = sums.entry(id.as_str()).or_insert_with(|| DVector::zeros(p));
                let e = resid[i];
                for j in 0..p {
                    s[j] += x[(i, j)] * e;
                }
            }
            let g = sums.len();
            if g < 2 {
                return Err(EngineError::InvalidArgument(
                    "cluster covariance needs at least two clusters".into(),
                ));
            }
            let mut meat = DMatrix::zeros(p, p);
            for s in sums.values() {
                meat.ger(1.0, s, s, 1.0);
            }
            let gf = g as f64;
            let correction = (gf / (gf - 1.0)) * ((n as f64 - 1.0) / dof);
            clusters = Some(g);
            (&ls.xtx_inv * meat * &ls.xtx_inv) * correction
        }
    };

    Ok(FittedModel {
        schema: design.schema.clone(),
        beta: ls.beta,
        cov_beta: symmetrize(&cov),
        n,
        dof: (n - p) as i64,
        covariance_kind: Some(kind),
        clusters,
        posterior: false,
    })
}

/// Conjugate update: `Σ = (S₀⁻¹ + XᵀX/σ²)⁻¹`, `μ = Σ(S₀⁻¹m₀ + Xᵀy/σ²)`.
pub fn fit_bayes(design: &Design, prior: &BayesPrior) -> Result<FittedModel> {
    let x = &design.x;
    let y = &design.y;
    let (n, p) = x.shape();
    if n == 0 {
        return Err(EngineError::InvalidDataset(
            "posterior fit needs at least one row".into(),
        ));
    }
    if prior.prior_mean.len() != p {
        return Err(EngineError::DimensionMismatch {
            expected: p,
            got: prior.prior_mean.len(),
        });
    }
    if prior.prior_covariance.shape() != (p, p) {
        return Err(EngineError::DimensionMismatch {
            expected: p,
            got: prior.prior_covariance.nrows(),
        });
    }
    if !(prior.noise_variance > 0.0 && prior.noise_variance.is_finite()) {
        return Err(EngineError::InvalidArgument(
            "noise_variance must be positive and finite".into(),
        ));
    }
    check_symmetric(&prior.prior_covariance, "prior covariance")?;
    let prior_precision = spd_inverse(&prior.prior_covariance, "prior covariance")?;
    let inv_s2 = 1.0 / prior.noise_variance;
    let precision = symmetrize(&(&prior_precision + x.transpose() * x * inv_s2));
    let chol = precision
        .clone()
        .cholesky()
        .ok_or_else(|| EngineError::NotPositiveDefinite("posterior precision".into()))?;
    let rhs = &prior_precision * &prior.prior_mean + x.transpose() * y * inv_s2;
    let beta = chol.solve(&rhs);
    let cov = symmetrize(&chol.inverse());
    Ok(FittedModel {
        schema: design.schema.clone(),
        beta,
        cov_beta: cov,
        n,
        dof: n as i64 - p as i64,
        covariance_kind: None,
        clusters: None,
        posterior: true,
    })
}

/// Builds the design for `data` and fits it according to `spec`: the
/// Bayesian update when a prior is present, least squares otherwise.
pub fn fit(data: &Dataset, spec: &ModelSpec) -> Result<(FittedModel, Vec<String>)> {
    let design = build_design(data, spec)?;
    let model = match &spec.bayes {
        Some(prior) => fit_bayes(&design, prior)?,
        None => {
            let ids = data.unit_ids();
            fit_ols(&design, spec.covariance_kind, ids.as_deref())?
        }
    };
    Ok((model, design.warnings))
}

//! Posterior probability that an effect is positive and that an arm is best.
//!
//! For candidate arm `w`, the contrasts `D(w, w′)ᵀβ` against every other arm
//! are stacked into a matrix `Δ`. Under a normal posterior the stacked
//! contrasts are `N(Δβ̄, ΔΣΔᵀ)`, and "`w` is best" is the event that every
//! contrast is positive: an orthant probability.
//!
//! Orthant probabilities in two or more dimensions use the Genz
//! separation-of-variables transform with variable prioritization and a
//! randomized Richtmyer lattice rule (baker-transformed, antithetic). Each
//! random shift is integrated sequentially and shifts are combined in index
//! order, so results do not depend on the number of worker threads.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Predicate};
use crate::error::{EngineError, Result};
use crate::fit::FittedModel;
use crate::linalg::check_symmetric;
use crate::normal;
use crate::vectors::{delta_vector, profile_from_subset, CovariateProfile};

/// Error bound reported for closed-form scalar normal probabilities.
pub const CLOSED_FORM_ERROR: f64 = 1e-15;

/// Relative jitter `ε` added as `ε·tr(Σ)/m` to rank-deficient covariances.
pub const JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegrationMethod {
    #[serde(rename = "closed_form")]
    ClosedForm1d,
    Qmc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthantOptions {
    /// Target for the reported error estimate.
    pub tol: f64,
    pub seed: u64,
    /// Number of independent random shifts of the lattice.
    pub shifts: usize,
    /// Lattice points per shift in the first round.
    pub min_points: usize,
    /// Hard cap on lattice points per shift.
    pub max_points: usize,
}

impl Default for OrthantOptions {
    fn default() -> Self {
        OrthantOptions {
            tol: 5e-4,
            seed: 0,
            shifts: 12,
            min_points: 512,
            max_points: 1 << 18,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrthantProbability {
    pub prob: f64,
    /// Three standard errors across random shifts (zero when exact).
    pub error: f64,
    pub method: IntegrationMethod,
    /// Lattice points per shift actually used.
    pub points: usize,
}

/// `P(Z > 0)` componentwise for `Z ~ N(mu, sigma)`.
pub fn mvn_orthant(
    mu: &[f64],
    sigma: &DMatrix<f64>,
    opts: &OrthantOptions,
) -> Result<OrthantProbability> {
    let m = mu.len();
    if m == 0 {
        return Err(EngineError::InvalidArgument(
            "orthant dimension must be at least 1".into(),
        ));
    }
    if sigma.shape() != (m, m) {
        return Err(EngineError::DimensionMismatch {
            expected: m,
            got: sigma.nrows(),
        });
    }
    if mu.iter().chain(sigma.iter()).any(|v| !v.is_finite()) {
        return Err(EngineError::NonFinite("orthant mean or covariance".into()));
    }
    check_symmetric(sigma, "orthant covariance")?;
    if opts.tol.is_nan() || opts.tol <= 0.0 || opts.shifts < 2 || opts.min_points == 0 {
        return Err(EngineError::InvalidArgument(
            "invalid orthant options".into(),
        ));
    }

    if m == 1 {
        let var = sigma[(0, 0)];
        if var < 0.0 {
            return Err(EngineError::NotPositiveDefinite(
                "orthant variance is negative".into(),
            ));
        }
        return Ok(OrthantProbability {
            prob: scalar_positive(mu[0], var),
            error: if var > 0.0 { CLOSED_FORM_ERROR } else { 0.0 },
            method: IntegrationMethod::ClosedForm1d,
            points: 0,
        });
    }

    let trace = sigma.trace();
    if trace == 0.0 && sigma.amax() == 0.0 {
        // Point mass at mu.
        let prob = if mu.iter().all(|v| *v > 0.0) {
            1.0
        } else {
            0.0
        };
        return Ok(OrthantProbability {
            prob,
            error: 0.0,
            method: IntegrationMethod::Qmc,
            points: 0,
        });
    }

    // P(Z > 0) = P(Y < mu) with Y = mu − Z ~ N(0, Σ).
    let factor = match prioritized_cholesky(sigma, mu) {
        Some(f) => f,
        None => {
            let mut jittered = sigma.clone();
            let eps = JITTER * trace / m as f64;
            for i in 0..m {
                jittered[(i, i)] += eps;
            }
            prioritized_cholesky(&jittered, mu).ok_or_else(|| {
                EngineError::NotPositiveDefinite("orthant covariance after jitter".into())
            })?
        }
    };
    Ok(integrate(&factor, opts))
}

fn scalar_positive(mean: f64, var: f64) -> f64 {
    if var == 0.0 {
        return match mean.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Less) => 0.0,
            _ => 0.5,
        };
    }
    normal::cdf(mean / var.sqrt())
}

struct Factor {
    l: DMatrix<f64>,
    upper: DVector<f64>,
}

/// Cholesky factor of a symmetric permutation of `sigma`, choosing at each
/// step the remaining variable with the smallest conditional probability of
/// falling below its limit, given the truncated means of those chosen so far.
fn prioritized_cholesky(sigma: &DMatrix<f64>, upper: &[f64]) -> Option<Factor> {
    let m = upper.len();
    let mut a = sigma.clone();
    let mut b = DVector::from_column_slice(upper);
    let mut l = DMatrix::<f64>::zeros(m, m);
    let mut y = vec![0.0; m];
    let max_diag = (0..m).map(|i| a[(i, i)]).fold(0.0, f64::max);
    let floor = 1e-12 * max_diag;

    for i in 0..m {
        let mut best = i;
        let mut best_p = f64::INFINITY;
        for j in i..m {
            let s2 = a[(j, j)] - (0..i).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
            if s2 <= floor {
                continue;
            }
            let shift: f64 = (0..i).map(|k| l[(j, k)] * y[k]).sum();
            let p = normal::cdf((b[j] - shift) / s2.sqrt());
            if p < best_p {
                best_p = p;
                best = j;
            }
        }
        if best != i {
            a.swap_rows(i, best);
            a.swap_columns(i, best);
            l.swap_rows(i, best);
            b.swap_rows(i, best);
        }
        let s2 = a[(i, i)] - (0..i).map(|k| l[(i, k)] * l[(i, k)]).sum::<f64>();
        if s2.is_nan() || s2 <= floor {
            return None;
        }
        let lii = s2.sqrt();
        l[(i, i)] = lii;
        for j in i + 1..m {
            let s: f64 = (0..i).map(|k| l[(j, k)] * l[(i, k)]).sum();
            l[(j, i)] = (a[(j, i)] - s) / lii;
        }
        let shift: f64 = (0..i).map(|k| l[(i, k)] * y[k]).sum();
        let z = (b[i] - shift) / lii;
        let pz = normal::cdf(z);
        y[i] = if pz > 1e-300 { -normal::pdf(z) / pz } else { z };
    }
    Some(Factor { l, upper: b })
}

/// Separation-of-variables integrand at `w ∈ [0,1]^{m−1}`.
fn integrand(f: &Factor, w: &[f64], y: &mut [f64]) -> f64 {
    let m = f.upper.len();
    let mut e = normal::cdf(f.upper[0] / f.l[(0, 0)]);
    let mut prod = e;
    for i in 1..m {
        if prod == 0.0 {
            return 0.0;
        }
        let u = (w[i - 1] * e).clamp(1e-300, 1.0 - 1e-16);
        y[i - 1] = normal::quantile(u);
        let shift: f64 = (0..i).map(|k| f.l[(i, k)] * y[k]).sum();
        e = normal::cdf((f.upper[i] - shift) / f.l[(i, i)]);
        prod *= e;
    }
    prod
}

fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut c = 2u64;
    while out.len() < count {
        if out
            .iter()
            .take_while(|p| *p * *p <= c)
            .all(|p| !c.is_multiple_of(*p))
        {
            out.push(c);
        }
        c += 1;
    }
    out
}

fn integrate(f: &Factor, opts: &OrthantOptions) -> OrthantProbability {
    let dim = f.upper.len() - 1;
    let generator: Vec<f64> = primes(dim)
        .iter()
        .map(|p| (*p as f64).sqrt().fract())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let shifts: Vec<Vec<f64>> = (0..opts.shifts)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect();

    let mut sums = vec![0.0; opts.shifts];
    let mut done = 0usize;
    let mut target = opts.min_points.min(opts.max_points.max(1));
    loop {
        let start = done;
        let end = target;
        let partial: Vec<f64> = shifts
            .par_iter()
            .map(|shift| {
                let mut w = vec![0.0; dim];
                let mut w_anti = vec![0.0; dim];
                let mut y = vec![0.0; dim + 1];
                let mut acc = 0.0;
                for k in (start + 1)..=end {
                    for j in 0..dim {
                        let x = (k as f64 * generator[j] + shift[j]).fract();
                        let t = (2.0 * x - 1.0).abs();
                        w[j] = t;
                        w_anti[j] = 1.0 - t;
                    }
                    acc += 0.5 * (integrand(f, &w, &mut y) + integrand(f, &w_anti, &mut y));
                }
                acc
            })
            .collect();
        for (s, p) in sums.iter_mut().zip(partial) {
            *s += p;
        }
        done = end;

        let ns = opts.shifts as f64;
        let means: Vec<f64> = sums.iter().map(|s| s / done as f64).collect();
        let mean = means.iter().sum::<f64>() / ns;
        let var = means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (ns - 1.0);
        let error = 3.0 * (var / ns).sqrt();
        if error <= opts.tol || done >= opts.max_points {
            if error > opts.tol {
                log::warn!(
                    "orthant integration stopped at cap with error {error:e} > tol {:e}",
                    opts.tol
                );
            }
            return OrthantProbability {
                prob: mean.clamp(0.0, 1.0),
                error,
                method: IntegrationMethod::Qmc,
                points: done,
            };
        }
        target = (done * 2).min(opts.max_points);
    }
}

/// Stacked delta vectors, one row per `(arm_to, arm_from)` comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedDelta {
    pub matrix: DMatrix<f64>,
    pub comparisons: Vec<(String, String)>,
}

impl StackedDelta {
    /// Contrasts of `candidate` against each of `others`.
    pub fn for_candidate(
        model: &FittedModel,
        profile: &CovariateProfile,
        candidate: &str,
        others: &[&str],
    ) -> Result<Self> {
        let p = model.p();
        let mut matrix = DMatrix::zeros(others.len(), p);
        let mut comparisons = Vec::with_capacity(others.len());
        for (r, other) in others.iter().enumerate() {
            let d = delta_vector(&model.schema, profile, candidate, other)?;
            for (c, v) in d.entries.iter().enumerate() {
                matrix[(r, c)] = *v;
            }
            comparisons.push((candidate.to_string(), other.to_string()));
        }
        Ok(StackedDelta {
            matrix,
            comparisons,
        })
    }

    /// Mean `Δβ` and covariance `Δ Cov(β) Δᵀ` of the stacked contrasts.
    pub fn moments(&self, model: &FittedModel) -> (Vec<f64>, DMatrix<f64>) {
        let mean = (&self.matrix * &model.beta).iter().copied().collect();
        let cov = &self.matrix * &model.cov_beta * self.matrix.transpose();
        let cov = (&cov + cov.transpose()) * 0.5;
        (mean, cov)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmProbability {
    pub arm: String,
    pub prob_best: f64,
    pub integration_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub arms: Vec<ArmProbability>,
    pub method: IntegrationMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicate: Option<String>,
}

impl RankingResult {
    pub fn total(&self) -> f64 {
        self.arms.iter().map(|a| a.prob_best).sum()
    }

    pub fn total_error(&self) -> f64 {
        self.arms.iter().map(|a| a.integration_error).sum()
    }

    pub fn get(&self, arm: &str) -> Option<f64> {
        self.arms.iter().find(|a| a.arm == arm).map(|a| a.prob_best)
    }
}

fn ranking_profile(
    model: &FittedModel,
    data: &Dataset,
    predicate: Option<&Predicate>,
) -> Result<CovariateProfile> {
    let all = Predicate::all();
    profile_from_subset(data, &model.schema, predicate.unwrap_or(&all), false)
}

/// Posterior `P(D(w₂, w₁)ᵀβ > 0)` via the scalar normal CDF. Returns the
/// probability and its error bound.
pub fn prob_positive(
    model: &FittedModel,
    data: &Dataset,
    arm_to: &str,
    arm_from: &str,
    predicate: Option<&Predicate>,
) -> Result<(f64, f64)> {
    if !model.posterior {
        return Err(EngineError::NotPosterior);
    }
    let profile = ranking_profile(model, data, predicate)?;
    let d = delta_vector(&model.schema, &profile, arm_to, arm_from)?;
    let (mean, var) = crate::vectors::apply(&d, model)?;
    let err = if var > 0.0 { CLOSED_FORM_ERROR } else { 0.0 };
    Ok((scalar_positive(mean, var), err))
}

/// Posterior probability that each of `arms` beats all the others.
pub fn prob_best(
    model: &FittedModel,
    data: &Dataset,
    arms: &[String],
    predicate: Option<&Predicate>,
    opts: &OrthantOptions,
) -> Result<RankingResult> {
    if !model.posterior {
        return Err(EngineError::NotPosterior);
    }
    if arms.len() < 2 {
        return Err(EngineError::InvalidArgument(
            "ranking needs at least two arms".into(),
        ));
    }
    for (i, a) in arms.iter().enumerate() {
        model.schema.arm_position(a)?;
        if arms[..i].contains(a) {
            return Err(EngineError::InvalidArgument(format!(
                "arm `{a}` listed twice"
            )));
        }
    }
    let profile = ranking_profile(model, data, predicate)?;
    let mut out = Vec::with_capacity(arms.len());
    let mut method = IntegrationMethod::ClosedForm1d;
    for candidate in arms {
        let others: Vec<&str> = arms
            .iter()
            .filter(|a| *a != candidate)
            .map(String::as_str)
            .collect();
        let stacked = StackedDelta::for_candidate(model, &profile, candidate, &others)?;
        let (mean, cov) = stacked.moments(model);
        let r = mvn_orthant(&mean, &cov, opts)?;
        method = r.method;
        out.push(ArmProbability {
            arm: candidate.clone(),
            prob_best: r.prob,
            integration_error: r.error,
        });
    }
    Ok(RankingResult {
        arms: out,
        method,
        predicate: predicate.filter(|p| !p.is_all()).map(ToString::to_string),
    })
}

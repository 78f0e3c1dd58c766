//! Brute-force reference implementations for tests and acceptance runs.
//!
//! Nothing here is used on the production path, and nothing here calls the
//! production linear algebra, normal functions, or samplers: the oracles have
//! their own Cholesky, their own `erfc`, and a counter-based Box–Muller
//! generator keyed by `(seed, index)` so runs are reproducible regardless of
//! how draws are split across threads.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Predicate};
use crate::error::{EngineError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub mc_draws: usize,
    pub seed: u64,
    /// Agreement threshold in Monte Carlo standard errors.
    pub mc_sigmas: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            mc_draws: 1_000_000,
            seed: 0,
            mc_sigmas: 3.0,
            abs_tol: 1e-10,
            rel_tol: 0.10,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mc_draws < 10_000 {
            return Err(EngineError::InvalidArgument(
                "mc_draws must be at least 10^4".into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Counter-based normal generator

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn keyed(seed: u64, counter: u64) -> u64 {
    splitmix64(splitmix64(seed ^ 0xD1B5_4A32_D192_ED03).wrapping_add(counter))
}

/// Uniform in (0, 1].
fn unit(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `k`-th standard normal of stream `seed` (Box–Muller on pair `k/2`).
pub fn counter_normal(seed: u64, k: u64) -> f64 {
    let pair = k / 2;
    let u1 = unit(keyed(seed, 2 * pair));
    let u2 = unit(keyed(seed, 2 * pair + 1));
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    if k.is_multiple_of(2) {
        r * theta.cos()
    } else {
        r * theta.sin()
    }
}

// ---------------------------------------------------------------------------
// Independent normal CDF

use std::f64::consts::FRAC_2_SQRT_PI;

/// `erfc(x)`: positive-term series for |x| < 2, Lentz continued fraction beyond.
pub fn oracle_erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - oracle_erfc(-x);
    }
    if x < 2.0 {
        // erf(x) = 2/√π · e^{−x²} · Σ 2ⁿ x^{2n+1} / (1·3·…·(2n+1))
        let mut term = x;
        let mut sum = x;
        let x2 = x * x;
        let mut n = 0.0;
        loop {
            n += 1.0;
            term *= 2.0 * x2 / (2.0 * n + 1.0);
            sum += term;
            if term <= 1e-17 * sum {
                break;
            }
        }
        return 1.0 - FRAC_2_SQRT_PI * (-x2).exp() * sum;
    }
    // erfc(x) = e^{−x²}/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + …))))
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..5000 {
        let a = k as f64 / 2.0;
        d = x + a * d;
        d = if d.abs() < tiny { tiny } else { d };
        c = x + a / c;
        c = if c.abs() < tiny { tiny } else { c };
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / f * (FRAC_2_SQRT_PI / 2.0)
}

pub fn oracle_normal_cdf(x: f64) -> f64 {
    0.5 * oracle_erfc(-x / std::f64::consts::SQRT_2)
}

// ---------------------------------------------------------------------------
// Exact small-case oracles

fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// Sample mean of outcomes in `arm`, over rows matching `predicate`.
pub fn arm_mean(data: &Dataset, arm: &str, predicate: Option<&Predicate>) -> Result<f64> {
    let mut ys = Vec::new();
    for row in data.rows() {
        if row.arm != arm {
            continue;
        }
        if let Some(p) = predicate {
            if !p.matches(data, row)? {
                continue;
            }
        }
        ys.push(row.outcome);
    }
    if ys.is_empty() {
        return Err(EngineError::EmptySubset(format!(
            "arm `{arm}` has no rows in the subset"
        )));
    }
    Ok(pairwise_sum(&ys) / ys.len() as f64)
}

/// Difference in arm means, optionally within a predicate subset.
pub fn group_means_effects(
    data: &Dataset,
    arm_to: &str,
    arm_from: &str,
    predicate: Option<&Predicate>,
) -> Result<f64> {
    Ok(arm_mean(data, arm_to, predicate)? - arm_mean(data, arm_from, predicate)?)
}

// ---------------------------------------------------------------------------
// Monte Carlo oracles

/// Lower factor of a PSD matrix; zero pivots leave their column at zero.
fn psd_cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -1e-9 * scale.max(1e-300) {
            return Err(EngineError::NotPositiveDefinite("oracle covariance".into()));
        }
        if d <= 1e-14 * scale {
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

const CHUNK: usize = 1 << 14;

/// Monte Carlo moments of a ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McRatio {
    pub mean: f64,
    pub variance: f64,
    /// Standard error of `mean`.
    pub mc_se: f64,
    /// Standard error of `variance`.
    pub variance_se: f64,
}

/// Draws `β ~ N(beta, cov)` and returns moments of `dᵀβ / bᵀβ`. Refuses when
/// `|bᵀβ̂| ≤ 5·sd(bᵀβ)`, the region where the ratio has no usable moments.
pub fn mc_ratio(
    beta: &DVector<f64>,
    cov: &DMatrix<f64>,
    d: &[f64],
    b: &[f64],
    draws: usize,
    seed: u64,
) -> Result<McRatio> {
    let p = beta.len();
    if d.len() != p || b.len() != p || cov.shape() != (p, p) {
        return Err(EngineError::DimensionMismatch {
            expected: p,
            got: d.len(),
        });
    }
    if draws < 2 {
        return Err(EngineError::InvalidArgument(
            "need at least two draws".into(),
        ));
    }
    let l = psd_cholesky(cov)?;
    let dv = DVector::from_column_slice(d);
    let bv = DVector::from_column_slice(b);
    let r0 = dv.dot(beta);
    let s0 = bv.dot(beta);
    let dl = l.transpose() * &dv;
    let bl = l.transpose() * &bv;
    let sd_s = bl.norm();
    if s0.abs() <= 5.0 * sd_s || s0 == 0.0 {
        return Err(EngineError::RatioGuard { es: s0, sd: sd_s });
    }
    let center = r0 / s0;

    let chunks = draws.div_ceil(CHUNK);
    let partial: Vec<[f64; 4]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(draws);
            let mut acc = [0.0; 4];
            for draw in lo..hi {
                let mut r = r0;
                let mut s = s0;
                for j in 0..p {
                    let z = counter_normal(seed, (draw * p + j) as u64);
                    r += dl[j] * z;
                    s += bl[j] * z;
                }
                let x = r / s - center;
                let x2 = x * x;
                acc[0] += x;
                acc[1] += x2;
                acc[2] += x2 * x;
                acc[3] += x2 * x2;
            }
            acc
        })
        .collect();
    let mut tot = [0.0; 4];
    for a in &partial {
        for k in 0..4 {
            tot[k] += a[k];
        }
    }
    let n = draws as f64;
    let m1 = tot[0] / n;
    let m2 = tot[1] / n;
    let m3 = tot[2] / n;
    let m4 = tot[3] / n;
    let var_pop = (m2 - m1 * m1).max(0.0);
    let variance = var_pop * n / (n - 1.0);
    let mu4 = m4 - 4.0 * m1 * m3 + 6.0 * m1 * m1 * m2 - 3.0 * m1.powi(4);
    Ok(McRatio {
        mean: center + m1,
        variance,
        mc_se: (variance / n).sqrt(),
        variance_se: ((mu4 - var_pop * var_pop).max(0.0) / n).sqrt(),
    })
}

/// Fraction of `N(mu, sigma)` draws in the positive orthant, with its
/// binomial standard error.
pub fn mc_orthant(mu: &[f64], sigma: &DMatrix<f64>, draws: usize, seed: u64) -> Result<(f64, f64)> {
    let m = mu.len();
    if m == 0 || sigma.shape() != (m, m) {
        return Err(EngineError::DimensionMismatch {
            expected: m,
            got: sigma.nrows(),
        });
    }
    if draws == 0 {
        return Err(EngineError::InvalidArgument(
            "need at least one draw".into(),
        ));
    }
    let l = psd_cholesky(sigma)?;
    let chunks = draws.div_ceil(CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(draws);
            let mut z = vec![0.0; m];
            let mut count = 0usize;
            for draw in lo..hi {
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj = counter_normal(seed, (draw * m + j) as u64);
                }
                let inside = (0..m).all(|i| {
                    let mut v = mu[i];
                    for k in 0..=i {
                        v += l[(i, k)] * z[k];
                    }
                    v > 0.0
                });
                count += inside as usize;
            }
            count
        })
        .sum();
    let prob = hits as f64 / draws as f64;
    let se = (prob * (1.0 - prob) / draws as f64).sqrt();
    Ok((prob, se))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_erfc_reference_values() {
        assert!((oracle_normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((oracle_normal_cdf(0.0) - 0.5).abs() < 1e-16);
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(oracle_erfc(3.5), 7.430_983_723_414_128e-7) < 1e-13);
        assert!(rel(oracle_erfc(2.9), 4.109_787_809_945_886e-5) < 1e-13);
        assert!(rel(oracle_erfc(2.0), 4.677_734_981_047_266e-3) < 1e-13);
        assert!(rel(oracle_erfc(1.5), 3.389_485_352_468_927e-2) < 1e-13);
        assert!((oracle_erfc(-1.0) - 1.842_700_792_949_715).abs() < 1e-15);
    }

    #[test]
    fn counter_normals_have_unit_moments() {
        let n = 200_000u64;
        let (mut s, mut s2) = (0.0, 0.0);
        for k in 0..n {
            let z = counter_normal(7, k);
            s += z;
            s2 += z * z;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn mc_ratio_zero_covariance_is_exact() {
        let beta = DVector::from_vec(vec![100.0, 10.0]);
        let cov = DMatrix::zeros(2, 2);
        let r = mc_ratio(&beta, &cov, &[0.0, 1.0], &[1.0, 0.0], 10_000, 1).unwrap();
        assert_eq!(r.mean, 0.1);
        assert_eq!(r.variance, 0.0);
    }

    #[test]
    fn mc_ratio_refuses_outside_guard() {
        let beta = DVector::from_vec(vec![2.0, 3.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 2.0]);
        assert!(matches!(
            mc_ratio(&beta, &cov, &[0.0, 1.0], &[1.0, 0.0], 10_000, 1),
            Err(EngineError::RatioGuard { .. })
        ));
    }

    #[test]
    fn mc_orthant_simple_cases() {
        let id = DMatrix::identity(2, 2);
        let (p, se) = mc_orthant(&[0.0, 0.0], &id, 200_000, 3).unwrap();
        assert!((p - 0.25).abs() < 4.0 * se);
        let (p, se) = mc_orthant(&[0.0], &DMatrix::identity(1, 1), 200_000, 3).unwrap();
        assert!((p - 0.5).abs() < 4.0 * se);
    }

    #[test]
    fn config_validation() {
        assert!(OracleConfig::default().validate().is_ok());
        let c = OracleConfig {
            mc_draws: 10,
            ..OracleConfig::default()
        };
        assert!(c.validate().is_err());
    }
}

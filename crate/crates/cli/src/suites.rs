//! Oracle suites behind `effect-engine verify`.
//!
//! Each suite draws its own randomized inputs from `seed`, compares
//! production results against the independent oracles, and reports one
//! check per property.

use std::time::{Duration, Instant};

use effect_core::absolute::{ate, cate, hte};
use effect_core::data::{CompareOp, CovariateValue, Dataset, Predicate, Record};
use effect_core::design::{ColumnSchema, CovariateEncoding, CovariateSource, ModelSpec};
use effect_core::fit::{fit, BayesPrior, CovarianceKind, FittedModel};
use effect_core::ranking::{mvn_orthant, prob_best, OrthantOptions};
use effect_core::relative::{ratio_moments, relative_effect};
use effect_core::vectors::{
    apply, baseline_vector, delta_vector, profile_from_subset, CovariateProfile,
};
use effect_core::verify::{arm_mean, group_means_effects, mc_orthant, mc_ratio, OracleConfig};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CliError, Result};

pub const SUITES: [&str; 6] = [
    "delta-identity",
    "group-means",
    "saturated",
    "coverage",
    "ratio",
    "orthant",
];

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteOutcome {
    pub suite: String,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub elapsed_secs: f64,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.into(),
        passed,
        detail,
    }
}

fn timing(limit: Duration, elapsed: Duration) -> Check {
    check(
        "runtime",
        elapsed < limit,
        format!(
            "{:.3}s (limit {:.0}s)",
            elapsed.as_secs_f64(),
            limit.as_secs_f64()
        ),
    )
}

pub fn run_suite(name: &str, seed: u64) -> Result<SuiteOutcome> {
    let start = Instant::now();
    let checks = match name {
        "delta-identity" => delta_identity(seed, 200),
        "group-means" => group_means(seed, 100),
        "saturated" => saturated(seed, 50),
        "coverage" => coverage(seed, 2000),
        "ratio" => ratio(seed, 20, OracleConfig::default().mc_draws),
        "orthant" => orthant(seed),
        other => {
            return Err(CliError::Validation(format!(
                "unknown suite `{other}`; expected one of {}",
                SUITES.join(", ")
            )))
        }
    }
    .map_err(CliError::from)?;
    Ok(SuiteOutcome {
        suite: name.into(),
        seed,
        checks,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn record(outcome: f64, arm: &str, covariates: Vec<CovariateValue>) -> Record {
    Record {
        outcome,
        arm: arm.into(),
        covariates,
        unit_id: None,
        period: None,
    }
}

type Checks = effect_core::Result<Vec<Check>>;

pub fn delta_identity(seed: u64, cases: usize) -> Checks {
    let start = Instant::now();
    let mut r = rng(seed, 1);
    let mut mismatches = 0usize;
    let mut compared = 0usize;
    for _ in 0..cases {
        let n_arms = r.random_range(2..6);
        let mut covs = Vec::new();
        for c in 0..r.random_range(0..5) {
            let source = CovariateSource::Column(c);
            let name = format!("x{c}");
            covs.push(if r.random_bool(0.5) {
                CovariateEncoding::Numeric { name, source }
            } else {
                let levels = (1..r.random_range(2..5)).map(|l| format!("l{l}")).collect();
                CovariateEncoding::OneHot {
                    name,
                    source,
                    reference: "l0".into(),
                    levels,
                }
            });
        }
        let arms: Vec<String> = (0..n_arms).map(|a| format!("arm{a}")).collect();
        let schema = ColumnSchema::new(covs, arms[0].clone(), arms[1..].to_vec(), true);
        let values = (0..schema.covariate_width())
            .map(|_| r.random_range(-1e3..1e3))
            .collect();
        let profile = CovariateProfile::new(&schema, values)?;
        for to in &arms {
            for from in &arms {
                if to == from {
                    continue;
                }
                let d = delta_vector(&schema, &profile, to, from)?;
                let diff = baseline_vector(&schema, &profile, to)?
                    .minus(&baseline_vector(&schema, &profile, from)?)?;
                compared += 1;
                if d.entries != diff.entries {
                    mismatches += 1;
                }
            }
        }
    }
    Ok(vec![
        check(
            "delta equals baseline difference exactly",
            mismatches == 0,
            format!("{compared} arm pairs over {cases} schemas, {mismatches} mismatches"),
        ),
        timing(Duration::from_secs(1), start.elapsed()),
    ])
}

fn two_arm(r: &mut ChaCha8Rng, n: usize) -> Dataset {
    let noise = Normal::new(0.0, r.random_range(0.5..3.0)).unwrap();
    let lift = r.random_range(-2.0..2.0);
    let mut arms: Vec<&str> = (0..n)
        .map(|i| if i % 2 == 0 { "ctl" } else { "trt" })
        .collect();
    arms.shuffle(r);
    let rows = arms
        .into_iter()
        .map(|a| {
            record(
                50.0 + if a == "trt" { lift } else { 0.0 } + noise.sample(r),
                a,
                vec![],
            )
        })
        .collect();
    Dataset::new(vec![], rows).expect("generated data is valid")
}

pub fn group_means(seed: u64, datasets: usize) -> Checks {
    let mut worst_ate = 0.0f64;
    let mut worst_base = 0.0f64;
    for k in 0..datasets {
        let mut r = rng(seed, 100 + k as u64);
        let n = r.random_range(4..=200);
        let data = two_arm(&mut r, n);
        let reference = if r.random_bool(0.5) { "ctl" } else { "trt" };
        let (m, _) = fit(&data, &ModelSpec::new(reference))?;
        let e = ate(&m, &data, "trt", "ctl")?;
        worst_ate =
            worst_ate.max((e.estimate - group_means_effects(&data, "trt", "ctl", None)?).abs());
        let profile = profile_from_subset(&data, &m.schema, &Predicate::all(), false)?;
        for arm in ["ctl", "trt"] {
            let (b, _) = apply(&baseline_vector(&m.schema, &profile, arm)?, &m)?;
            worst_base = worst_base.max((b - arm_mean(&data, arm, None)?).abs());
        }
    }
    Ok(vec![
        check(
            "ate equals difference in means",
            worst_ate <= 1e-10,
            format!("{datasets} datasets, max |diff| = {worst_ate:e}"),
        ),
        check(
            "baselines equal arm means",
            worst_base <= 1e-10,
            format!("max |diff| = {worst_base:e}"),
        ),
    ])
}

pub fn saturated(seed: u64, datasets: usize) -> Checks {
    let mut worst = 0.0f64;
    for k in 0..datasets {
        let mut r = rng(seed, 200 + k as u64);
        let n = r.random_range(8..=120);
        let categorical = k % 2 == 1;
        let noise = Normal::new(0.0, 1.0).unwrap();
        let means: Vec<f64> = (0..4).map(|_| r.random_range(-5.0..5.0)).collect();
        let cells = [("ctl", 0), ("ctl", 1), ("trt", 0), ("trt", 1)];
        let level = |g: usize| {
            if categorical {
                CovariateValue::Level(["lo", "hi"][g].into())
            } else {
                CovariateValue::Numeric(g as f64)
            }
        };
        let rows = (0..n)
            .map(|i| {
                let c = if i < 8 { i % 4 } else { r.random_range(0..4) };
                let (arm, g) = cells[c];
                record(means[c] + noise.sample(&mut r), arm, vec![level(g)])
            })
            .collect();
        let data = Dataset::new(vec!["g".into()], rows)?;
        let (m, _) = fit(&data, &ModelSpec::new("ctl"))?;
        let pred = |g: usize| -> Predicate {
            if categorical {
                Predicate::single("g", CompareOp::Eq, ["lo", "hi"][g])
            } else {
                Predicate::single("g", CompareOp::Eq, g)
            }
        };
        let mut diffs = Vec::new();
        for g in 0..2 {
            let want = group_means_effects(&data, "trt", "ctl", Some(&pred(g)))?;
            let got = cate(&m, &data, "trt", "ctl", &pred(g))?.estimate;
            worst = worst.max((got - want).abs());
            diffs.push(want);
        }
        let h = hte(&m, &data, "trt", "ctl", &pred(1))?.estimate;
        worst = worst.max((h - (diffs[1] - diffs[0])).abs());
    }
    Ok(vec![check(
        "cate and hte equal subgroup differences in means",
        worst <= 1e-10,
        format!("{datasets} datasets, max |diff| = {worst:e}"),
    )])
}

const BETA_TRUE: [f64; 6] = [1.0, 0.5, -0.3, 2.0, 0.4, 0.2];

/// One draw from the heteroskedastic coverage design. Returns the data and
/// the sample-conditional ATE `2 + 0.4·x̄₁ + 0.2·x̄₂`.
pub fn coverage_dataset(seed: u64, sim: u64, n: usize) -> (Dataset, f64) {
    let mut r = rng(seed, 10_000 + sim);
    let b = BETA_TRUE;
    let mut rows = Vec::with_capacity(n);
    let (mut s1, mut s2) = (0.0, 0.0);
    for i in 0..n {
        let x1: f64 = r.sample(StandardNormal);
        let x2: f64 = r.random_range(0.0..2.0);
        let w = if i < 2 {
            i as f64
        } else if r.random_bool(0.5) {
            1.0
        } else {
            0.0
        };
        let sd = (0.5 + x1.abs()) * (1.0 + w);
        let z: f64 = r.sample(StandardNormal);
        let y = b[0] + b[1] * x1 + b[2] * x2 + w * (b[3] + b[4] * x1 + b[5] * x2) + sd * z;
        s1 += x1;
        s2 += x2;
        let arm = if w == 1.0 { "t" } else { "c" };
        rows.push(record(
            y,
            arm,
            vec![CovariateValue::Numeric(x1), CovariateValue::Numeric(x2)],
        ));
    }
    let nf = n as f64;
    let truth = b[3] + b[4] * s1 / nf + b[5] * s2 / nf;
    (
        Dataset::new(vec!["x1".into(), "x2".into()], rows).expect("valid"),
        truth,
    )
}

pub fn coverage(seed: u64, sims: usize) -> Checks {
    let start = Instant::now();
    let spec = ModelSpec::new("c").with_covariance(CovarianceKind::Hc1);
    let hits: Vec<bool> = (0..sims as u64)
        .into_par_iter()
        .map(|s| {
            let (data, truth) = coverage_dataset(seed, s, 200);
            let (m, _) = fit(&data, &spec)?;
            let e = ate(&m, &data, "t", "c")?;
            Ok(e.ci_low <= truth && truth <= e.ci_high)
        })
        .collect::<effect_core::Result<_>>()?;
    let rate = hits.iter().filter(|h| **h).count() as f64 / sims as f64;
    Ok(vec![
        check(
            "95% interval coverage in [0.93, 0.97]",
            (0.93..=0.97).contains(&rate),
            format!("{sims} simulations, coverage {rate:.4}"),
        ),
        timing(Duration::from_secs(120), start.elapsed()),
    ])
}

fn ratio_model(seed: u64, k: u64) -> effect_core::Result<(FittedModel, Dataset)> {
    let mut r = rng(seed, 300 + k);
    let n = r.random_range(200..600);
    let base = r.random_range(20.0..80.0);
    let lift = r.random_range(-0.2..0.3) * base;
    let slope = r.random_range(-2.0..2.0);
    let noise = Normal::new(0.0, r.random_range(1.0..8.0)).unwrap();
    let rows = (0..n)
        .map(|i| {
            let x: f64 = r.random_range(-1.0..1.0);
            let t = i % 2 == 1;
            let y = base
                + slope * x
                + if t { lift * (1.0 + 0.2 * x) } else { 0.0 }
                + noise.sample(&mut r);
            record(
                y,
                if t { "t" } else { "c" },
                vec![CovariateValue::Numeric(x)],
            )
        })
        .collect();
    let data = Dataset::new(vec!["x".into()], rows)?;
    let (m, _) = fit(&data, &ModelSpec::new("c"))?;
    Ok((m, data))
}

pub fn ratio(seed: u64, models: usize, draws: usize) -> Checks {
    let start = Instant::now();
    let (are, var) = ratio_moments(3.0, 2.0, 2.0, 1.0, -1.0)?;
    let mut checks = vec![check(
        "hand-derived moments",
        (are - 2.125).abs() <= 1e-12 && (var - 1.8125).abs() <= 1e-12,
        format!("are = {are}, variance = {var}"),
    )];
    let mut worst = 0.0f64;
    for k in 0..models as u64 {
        let (m, data) = ratio_model(seed, k)?;
        let est = relative_effect(&m, &data, "t", "c", None)?;
        let profile = profile_from_subset(&data, &m.schema, &Predicate::all(), false)?;
        let d = delta_vector(&m.schema, &profile, "t", "c")?;
        let b = baseline_vector(&m.schema, &profile, "c")?;
        let mc = mc_ratio(
            &m.beta,
            &m.cov_beta,
            &d.entries,
            &b.entries,
            draws,
            seed.wrapping_add(k),
        )?;
        worst = worst.max((mc.mean - est.are).abs() / mc.mc_se);
    }
    checks.push(check(
        "relative effect within 3 mc_se of simulation",
        worst <= 3.0,
        format!("{models} models, {draws} draws, worst |diff|/mc_se = {worst:.3}"),
    ));
    checks.push(timing(Duration::from_secs(120), start.elapsed()));
    Ok(checks)
}

fn random_spd(r: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(m, m, |_, _| r.sample::<f64, _>(StandardNormal));
    &g * g.transpose() + DMatrix::identity(m, m) * 0.1
}

fn ranked_posterior(
    seed: u64,
    arms: usize,
) -> effect_core::Result<(FittedModel, Dataset, Vec<String>)> {
    let mut r = rng(seed, 400 + arms as u64);
    let labels: Vec<String> = (0..arms).map(|a| format!("v{a}")).collect();
    let lifts: Vec<f64> = (0..arms).map(|_| r.random_range(-0.3..0.3)).collect();
    let noise = Normal::new(0.0, 1.0).unwrap();
    let rows = (0..40 * arms)
        .map(|i| {
            let a = i % arms;
            let x: f64 = r.random_range(-1.0..1.0);
            record(
                1.0 + x + lifts[a] + noise.sample(&mut r),
                &labels[a],
                vec![CovariateValue::Numeric(x)],
            )
        })
        .collect();
    let data = Dataset::new(vec!["x".into()], rows)?;
    let p = 2 + 2 * (arms - 1);
    let mut spec = ModelSpec::new(labels[0].clone());
    spec.bayes = Some(BayesPrior::isotropic(p, 0.0, 10.0, 1.0));
    let (m, _) = fit(&data, &spec)?;
    Ok((m, data, labels))
}

pub fn orthant(seed: u64) -> Checks {
    let opts = OrthantOptions {
        seed,
        ..OrthantOptions::default()
    };
    let mut checks = Vec::new();

    let mut worst = 0.0f64;
    for rho in [-0.9, -0.5, 0.0, 0.3, 0.8] {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        let p = mvn_orthant(&[0.0, 0.0], &sigma, &opts)?.prob;
        worst = worst.max((p - (0.25 + f64::asin(rho) / (2.0 * std::f64::consts::PI))).abs());
    }
    checks.push(check(
        "bivariate closed form",
        worst <= 5e-4,
        format!("5 correlations, max |diff| = {worst:e}"),
    ));

    let mut r = rng(seed, 500);
    let mut failures = Vec::new();
    for k in 0..20u64 {
        let m = 1 + (k as usize % 5);
        let sigma = random_spd(&mut r, m);
        let mu: Vec<f64> = (0..m)
            .map(|_| 0.5 * r.sample::<f64, _>(StandardNormal))
            .collect();
        let q = mvn_orthant(&mu, &sigma, &opts)?;
        let (p, se) = mc_orthant(&mu, &sigma, 1_000_000, seed.wrapping_add(k))?;
        let tol = f64::max(5e-4, 3.0 * se);
        if (q.prob - p).abs() > tol {
            failures.push(format!("#{k} (m = {m}): {} vs {p} (tol {tol:e})", q.prob));
        }
    }
    checks.push(check(
        "agrees with simulation for m <= 5",
        failures.is_empty(),
        if failures.is_empty() {
            "20 matrices".into()
        } else {
            failures.join("; ")
        },
    ));

    for arms in [3, 4, 5] {
        let (m, data, labels) = ranked_posterior(seed, arms)?;
        let res = prob_best(&m, &data, &labels, None, &opts)?;
        let (total, err) = (res.total(), res.total_error());
        checks.push(check(
            &format!("{arms}-arm probabilities sum to one"),
            (total - 1.0).abs() <= err.max(1e-12),
            format!("sum = {total}, combined error = {err:e}"),
        ));
    }

    // Identical arms under a flat prior: every candidate's contrasts share one law.
    let rows = (0..60)
        .map(|i| record((i / 3 % 7) as f64, ["a", "b", "c"][i % 3], vec![]))
        .collect();
    let data = Dataset::new(vec![], rows)?;
    let (m, _) = fit(
        &data,
        &ModelSpec::new("a").with_covariance(CovarianceKind::Classical),
    )?;
    let m = m.into_flat_prior_posterior();
    let labels: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
    let res = prob_best(&m, &data, &labels, None, &opts)?;
    let worst = res
        .arms
        .iter()
        .map(|a| (a.prob_best - 1.0 / 3.0).abs())
        .fold(0.0, f64::max);
    checks.push(check(
        "exchangeable three arms split evenly",
        worst <= 2e-3,
        format!(
            "{}; max |p - 1/3| = {worst:e}",
            res.arms
                .iter()
                .map(|a| format!("{} = {:.5}", a.arm, a.prob_best))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    ));
    Ok(checks)
}

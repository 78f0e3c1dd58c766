#![allow(dead_code)]

use effect_core::data::{CovariateValue, Dataset, Record};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn record(y: f64, arm: &str, covariates: Vec<CovariateValue>) -> Record {
    Record {
        outcome: y,
        arm: arm.to_string(),
        covariates,
        unit_id: None,
        period: None,
    }
}

pub fn four_row() -> Dataset {
    let rows = [(1.0, "0"), (3.0, "0"), (4.0, "1"), (6.0, "1")]
        .iter()
        .map(|(y, a)| record(*y, a, vec![]))
        .collect();
    Dataset::new(vec![], rows).unwrap()
}

/// Two-arm data without covariates; each arm gets at least two rows.
pub fn no_covariate(rng: &mut ChaCha8Rng, n: usize) -> Dataset {
    let noise = Normal::new(0.0, 1.0).unwrap();
    let shift = rng.random_range(-3.0..3.0);
    let rows = (0..n)
        .map(|i| {
            let arm = match i {
                0 | 1 => "c",
                2 | 3 => "t",
                _ if rng.random_bool(0.5) => "t",
                _ => "c",
            };
            let y = 10.0 + if arm == "t" { shift } else { 0.0 } + noise.sample(rng);
            record(y, arm, vec![])
        })
        .collect();
    Dataset::new(vec![], rows).unwrap()
}

/// Two arms and one binary covariate `g`, every cell holding at least two rows.
pub fn binary_covariate(rng: &mut ChaCha8Rng, n: usize) -> Dataset {
    let noise = Normal::new(0.0, 1.0).unwrap();
    let cells = [("c", 0.0), ("c", 1.0), ("t", 0.0), ("t", 1.0)];
    let effects: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
    let rows = (0..n)
        .map(|i| {
            let k = if i < 8 { i % 4 } else { rng.random_range(0..4) };
            let (arm, g) = cells[k];
            record(
                effects[k] + noise.sample(rng),
                arm,
                vec![CovariateValue::Numeric(g)],
            )
        })
        .collect();
    Dataset::new(vec!["g".into()], rows).unwrap()
}

/// Two numeric covariates, three arms with heterogeneous effects.
pub fn three_arm(rng: &mut ChaCha8Rng, n: usize) -> Dataset {
    let noise = Normal::new(0.0, 1.0).unwrap();
    let arms = ["a", "b", "c"];
    let rows = (0..n)
        .map(|i| {
            let arm = arms[if i < 3 { i } else { rng.random_range(0..3) }];
            let x1: f64 = rng.random_range(-1.0..1.0);
            let x2: f64 = rng.random_range(0.0..2.0);
            let lift = match arm {
                "a" => 0.0,
                "b" => 1.0 + 0.5 * x1,
                _ => 0.5 - 0.3 * x2,
            };
            let y = 5.0 + x1 + 0.5 * x2 + lift + noise.sample(rng);
            record(
                y,
                arm,
                vec![CovariateValue::Numeric(x1), CovariateValue::Numeric(x2)],
            )
        })
        .collect();
    Dataset::new(vec!["x1".into(), "x2".into()], rows).unwrap()
}

mod common;

use effect_core::absolute::ate;
use effect_core::data::{CovariateValue, Dataset, Record};
use effect_core::design::{ColumnSchema, CovariateEncoding, CovariateSource, ModelSpec};
use effect_core::fit::{fit, CovarianceKind};
use effect_core::relative::relative_effect;
use effect_core::vectors::{apply, baseline_vector, delta_vector, CovariateProfile};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn schema(k: usize, arms: usize, interactions: bool) -> ColumnSchema {
    let covs = (0..k)
        .map(|i| CovariateEncoding::Numeric {
            name: format!("x{i}"),
            source: CovariateSource::Column(i),
        })
        .collect();
    let arms: Vec<String> = (1..arms).map(|a| format!("arm{a}")).collect();
    ColumnSchema::new(covs, "arm0".into(), arms, interactions)
}

proptest! {
    #[test]
    fn delta_is_baseline_difference(
        k in 0usize..5,
        n_arms in 2usize..6,
        interactions in any::<bool>(),
        values in prop::collection::vec(-1e6..1e6f64, 5),
        to in 0usize..6,
        from in 0usize..6,
    ) {
        let s = schema(k, n_arms, interactions);
        let (to, from) = (to % n_arms, from % n_arms);
        prop_assume!(to != from);
        let profile = CovariateProfile::new(&s, values[..k].to_vec()).unwrap();
        let (a, b) = (format!("arm{to}"), format!("arm{from}"));
        let d = delta_vector(&s, &profile, &a, &b).unwrap();
        let diff = baseline_vector(&s, &profile, &a).unwrap()
            .minus(&baseline_vector(&s, &profile, &b).unwrap()).unwrap();
        prop_assert_eq!(d.entries, diff.entries);
    }

    #[test]
    fn ate_ignores_row_order(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let data = common::three_arm(&mut rng, 60);
        let mut rows = data.rows().to_vec();
        rows.shuffle(&mut rng);
        let shuffled = Dataset::new(data.covariate_names().to_vec(), rows).unwrap();
        let spec = ModelSpec::new("a");
        let (m1, _) = fit(&data, &spec).unwrap();
        let (m2, _) = fit(&shuffled, &spec).unwrap();
        let e1 = ate(&m1, &data, "b", "a").unwrap();
        let e2 = ate(&m2, &shuffled, "b", "a").unwrap();
        prop_assert!((e1.estimate - e2.estimate).abs() < 1e-10);
        prop_assert!((e1.std_error - e2.std_error).abs() < 1e-10);
    }

    #[test]
    fn ate_ignores_arm_labels(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let data = common::three_arm(&mut rng, 60);
        let rename = |a: &str| match a { "a" => "zz", "b" => "aa", _ => "mm" }.to_string();
        let rows: Vec<Record> = data.rows().iter().map(|r| Record { arm: rename(&r.arm), ..r.clone() }).collect();
        let relabeled = Dataset::new(data.covariate_names().to_vec(), rows).unwrap();
        let (m1, _) = fit(&data, &ModelSpec::new("a")).unwrap();
        let (m2, _) = fit(&relabeled, &ModelSpec::new("zz")).unwrap();
        for (to, from) in [("b", "a"), ("c", "b"), ("a", "c")] {
            let e1 = ate(&m1, &data, to, from).unwrap();
            let e2 = ate(&m2, &relabeled, &rename(to), &rename(from)).unwrap();
            prop_assert!((e1.estimate - e2.estimate).abs() < 1e-9);
            prop_assert!((e1.std_error - e2.std_error).abs() < 1e-9);
        }
    }

    #[test]
    fn application_is_linear(seed in any::<u64>(), a in -5.0..5.0f64, b in -5.0..5.0f64) {
        let mut rng = common::rng(seed);
        let data = common::three_arm(&mut rng, 40);
        let (m, _) = fit(&data, &ModelSpec::new("a")).unwrap();
        let profile = CovariateProfile::new(&m.schema, vec![0.2, 1.1]).unwrap();
        let u = delta_vector(&m.schema, &profile, "b", "a").unwrap();
        let v = baseline_vector(&m.schema, &profile, "c").unwrap();
        let (fu, _) = apply(&u, &m).unwrap();
        let (fv, _) = apply(&v, &m).unwrap();
        let (fw, _) = apply(&u.combine(a, &v, b).unwrap(), &m).unwrap();
        prop_assert!((fw - (a * fu + b * fv)).abs() < 1e-9 * (1.0 + fw.abs()));
    }

    #[test]
    fn relative_effect_is_scale_free(seed in any::<u64>(), c in 0.01..100.0f64) {
        let mut rng = common::rng(seed);
        let data = common::three_arm(&mut rng, 200);
        let scaled_rows: Vec<Record> = data.rows().iter().map(|r| Record { outcome: r.outcome * c, ..r.clone() }).collect();
        let scaled = Dataset::new(data.covariate_names().to_vec(), scaled_rows).unwrap();
        let spec = ModelSpec::new("a").with_covariance(CovarianceKind::Hc1);
        let (m1, _) = fit(&data, &spec).unwrap();
        let (m2, _) = fit(&scaled, &spec).unwrap();
        let r1 = relative_effect(&m1, &data, "b", "a", None).unwrap();
        let r2 = relative_effect(&m2, &scaled, "b", "a", None).unwrap();
        prop_assert!((r1.are - r2.are).abs() < 1e-9);
        prop_assert!((r1.variance - r2.variance).abs() < 1e-9 * (1.0 + r1.variance));
    }
}

#[test]
fn pure_noise_covariate_leaves_ate_unbiased() {
    // Adding an irrelevant covariate must not move the ATE far from the truth.
    let mut rng = common::rng(7);
    let base = common::no_covariate(&mut rng, 400);
    let noise: Vec<f64> = (0..base.len())
        .map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0)
        .collect();
    let rows: Vec<Record> = base
        .rows()
        .iter()
        .zip(&noise)
        .map(|(r, z)| Record {
            covariates: vec![CovariateValue::Numeric(*z)],
            ..r.clone()
        })
        .collect();
    let with = Dataset::new(vec!["z".into()], rows).unwrap();
    let (m0, _) = fit(&base, &ModelSpec::new("c")).unwrap();
    let (m1, _) = fit(&with, &ModelSpec::new("c")).unwrap();
    let e0 = ate(&m0, &base, "t", "c").unwrap();
    let e1 = ate(&m1, &with, "t", "c").unwrap();
    assert!((e0.estimate - e1.estimate).abs() < 2.0 * e0.std_error);
}

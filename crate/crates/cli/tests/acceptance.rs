//! Acceptance gate: one PASS/FAIL line per criterion; exits nonzero on any failure.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use effect_engine::suites::{run_suite, Check};

const SEED: u64 = 0;

struct Criterion {
    number: usize,
    title: &'static str,
    checks: Vec<Check>,
}

fn from_suite(number: usize, title: &'static str, suite: &str) -> Criterion {
    let checks = match run_suite(suite, SEED) {
        Ok(o) => o.checks,
        Err(e) => vec![Check {
            name: "suite ran".into(),
            passed: false,
            detail: e.to_string(),
        }],
    };
    Criterion {
        number,
        title,
        checks,
    }
}

fn determinism() -> Criterion {
    let dir = tempfile::tempdir().unwrap();
    let csv = common::panel_csv();
    let (first, a) = common::run(dir.path(), &csv, common::PANEL_CONFIG, &[], &[]);
    let (second, b) = common::run(dir.path(), &csv, common::PANEL_CONFIG, &[], &[]);
    let ok_runs = first.status.success() && second.status.success();
    let same = match (&a, &b) {
        (Some(a), Some(b)) => common::strip_timestamp(a) == common::strip_timestamp(b),
        _ => false,
    };
    let bytes = a.as_ref().map_or(0, String::len);
    Criterion {
        number: 7,
        title: "determinism",
        checks: vec![
            Check {
                name: "both runs succeed".into(),
                passed: ok_runs,
                detail: String::from_utf8_lossy(&second.stderr).trim().into(),
            },
            Check {
                name: "reports byte-identical apart from timestamps".into(),
                passed: same,
                detail: format!("{bytes} bytes, 8 queries including two rankings"),
            },
        ],
    }
}

fn end_to_end() -> Criterion {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"data":{"outcome":"y","arm":"w"},
      "model":{"reference_arm":"0","covariance_kind":"classical"},
      "queries":[{"type":"ate","arms":["1","0"]}]}"#;
    let (out, report) = common::run(dir.path(), common::FOUR_ROW_CSV, cfg, &[], &[]);
    let parsed = report
        .as_deref()
        .and_then(|r| serde_json::from_str::<serde_json::Value>(r).ok())
        .and_then(|v| {
            let r = &v["results"][0]["result"];
            Some((r["estimate"].as_f64()?, r["std_error"].as_f64()?))
        });
    let (passed, detail) = match parsed {
        Some((est, se)) => (
            out.status.success()
                && format!("{est:.8}") == "3.00000000"
                && format!("{se:.8}") == "1.41421356",
            format!("estimate {est:.8}, std_error {se:.8}"),
        ),
        None => (false, String::from_utf8_lossy(&out.stderr).trim().into()),
    };
    Criterion {
        number: 8,
        title: "end-to-end",
        checks: vec![Check {
            name: "4-row example through the CLI".into(),
            passed,
            detail,
        }],
    }
}

fn main() -> ExitCode {
    let start = Instant::now();
    let criteria = vec![
        from_suite(1, "delta identity", "delta-identity"),
        from_suite(2, "group-means equivalence", "group-means"),
        from_suite(3, "saturated-model CATE/HTE", "saturated"),
        from_suite(4, "CI coverage", "coverage"),
        from_suite(5, "ratio moments", "ratio"),
        from_suite(6, "MVN orthant", "orthant"),
        determinism(),
        end_to_end(),
    ];
    let mut all = true;
    for c in &criteria {
        let passed = c.checks.iter().all(|k| k.passed);
        all &= passed;
        println!(
            "criterion {} {}: {}",
            c.number,
            if passed { "PASS" } else { "FAIL" },
            c.title
        );
        for k in &c.checks {
            println!(
                "    [{}] {}: {}",
                if k.passed { "ok" } else { "FAILED" },
                k.name,
                k.detail
            );
        }
    }
    println!(
        "acceptance: {}/{} criteria passed in {:.1}s",
        criteria
            .iter()
            .filter(|c| c.checks.iter().all(|k| k.passed))
            .count(),
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const FOUR_ROW_CSV: &str = "y,w\n1,0\n3,0\n4,1\n6,1\n";

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_effect-engine"))
}

pub fn write(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, contents).unwrap();
    p
}

/// `run --data --config --out` plus extra arguments.
pub fn run(
    dir: &Path,
    csv: &str,
    config: &str,
    extra: &[&str],
    env: &[(&str, &str)],
) -> (Output, Option<String>) {
    let data = write(dir, "data.csv", csv);
    let cfg = write(dir, "config.json", config);
    let out = dir.join("report.json");
    let _ = std::fs::remove_file(&out);
    let mut cmd = bin();
    cmd.args(["run", "--data"])
        .arg(&data)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(extra);
    for (k, v) in env {
        cmd.env(k, v);
    }
    let output = cmd.output().unwrap();
    (output, std::fs::read_to_string(&out).ok())
}

/// Panel with four arms, a numeric and a categorical covariate, unit ids
/// and two periods. Deterministic.
pub fn panel_csv() -> String {
    let mut s = String::from("y,arm,x,segment,unit,period\n");
    let arms = ["ctl", "a", "b", "c"];
    let segments = ["north", "south", "east"];
    let mut state: u64 = 12345;
    let mut next = || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 11) as f64) / (1u64 << 53) as f64
    };
    for unit in 0..120 {
        let arm = arms[unit % 4];
        let seg = segments[(unit / 4) % 3];
        let x = next() * 2.0 - 1.0;
        for period in 1..=2 {
            let lift = match arm {
                "ctl" => 0.0,
                "a" => 1.0,
                "b" => 1.2 + 0.5 * x,
                _ => 0.4 * period as f64,
            };
            let seg_shift = if seg == "south" { 2.0 } else { 0.0 };
            let y = 20.0 + 3.0 * x + seg_shift + lift + (next() - 0.5) * 2.0;
            writeln!(s, "{y},{arm},{x},{seg},u{unit},{period}").unwrap();
        }
    }
    s
}

pub const PANEL_CONFIG: &str = r#"{
  "data": {"outcome": "y", "arm": "arm", "covariates": ["x", "segment"], "unit_id": "unit", "period": "period"},
  "model": {
    "reference_arm": "ctl",
    "covariance_kind": "cluster",
    "bayes": {"prior_mean": 0, "prior_variance": 100, "noise_variance": 1}
  },
  "queries": [
    {"type": "ate", "arms": ["a", "ctl"]},
    {"type": "cate", "arms": ["b", "ctl"], "predicate": "x > 0", "ci_level": 0.9},
    {"type": "hte", "arms": ["b", "ctl"], "predicate": "segment == 'south'"},
    {"type": "dte", "arms": ["c", "ctl"], "periods": [1, 2]},
    {"type": "relative", "arms": ["a", "ctl"], "predicate": "segment != north"},
    {"type": "ate", "arms": ["a", "ctl"], "covariance_kind": "hc1"},
    {"type": "rank", "arms": ["ctl", "a", "b", "c"]},
    {"type": "rank", "arms": ["a", "b", "c"], "predicate": "x <= 0.25"}
  ],
  "seed": 11,
  "mvn_tol": 0.0005
}"#;

pub fn strip_timestamp(report: &str) -> String {
    report
        .lines()
        .filter(|l| !l.trim_start().starts_with("\"generated_at\""))
        .collect::<Vec<_>>()
        .join("\n")
}

//! The `run` pipeline: load, fit once per requirement, answer queries.

use std::collections::BTreeMap;
use std::path::PathBuf;

use effect_core::absolute::{ate, cate, dte, hte, EffectEstimate};
use effect_core::data::{Dataset, Predicate};
use effect_core::design::{build_design, Design, ModelSpec};
use effect_core::fit::{fit_bayes, fit_ols, CovarianceKind, FittedModel};
use effect_core::ranking::{prob_best, OrthantOptions};
use effect_core::relative::relative_effect;
use effect_core::EngineError;
use rayon::prelude::*;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{OutputFormat, Query, QueryConfig, QueryType};
use crate::error::{CliError, Result};
use crate::input::parse_csv;
use crate::report::{
    flag_non_finite, to_json, to_text, write_atomic, ErrorRecord, Metadata, ModelSummary,
    QueryResult, Report, Status, REPORT_VERSION,
};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub data: PathBuf,
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub flat_prior_ok: bool,
    pub partial: bool,
}

/// Which fit a query needs. Effect queries use least squares; rankings use
/// the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FitKey {
    Ols(CovarianceKind),
    Bayes,
    FlatPrior(CovarianceKind),
}

impl FitKey {
    pub fn id(self) -> String {
        match self {
            FitKey::Ols(k) => format!("ols-{}", kind_name(k)),
            FitKey::Bayes => "bayes".into(),
            FitKey::FlatPrior(k) => format!("flat_prior-{}", kind_name(k)),
        }
    }

    fn kind(self) -> &'static str {
        match self {
            FitKey::Ols(_) => "ols",
            FitKey::Bayes => "bayes",
            FitKey::FlatPrior(_) => "flat_prior",
        }
    }
}

fn kind_name(k: CovarianceKind) -> &'static str {
    match k {
        CovarianceKind::Classical => "classical",
        CovarianceKind::Hc1 => "hc1",
        CovarianceKind::Cluster => "cluster",
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn fit_key(cfg: &QueryConfig, q: &Query, index: usize, flat_prior_ok: bool) -> Result<FitKey> {
    let kind = q.covariance_kind.unwrap_or(cfg.model.covariance_kind);
    if q.kind != QueryType::Rank {
        return Ok(FitKey::Ols(kind));
    }
    if cfg.model.bayes.is_some() {
        Ok(FitKey::Bayes)
    } else if flat_prior_ok {
        Ok(FitKey::FlatPrior(kind))
    } else {
        Err(CliError::Validation(format!(
            "query {index}: rank needs a posterior; add a `bayes` block to the model or pass --flat-prior-ok \
             to treat the least-squares fit as a flat-prior posterior"
        )))
    }
}

fn fit_one(key: FitKey, design: &Design, data: &Dataset, cfg: &QueryConfig) -> Result<FittedModel> {
    let ids = data.unit_ids();
    match key {
        FitKey::Ols(k) => Ok(fit_ols(design, k, ids.as_deref())?),
        FitKey::FlatPrior(k) => Ok(fit_ols(design, k, ids.as_deref())?.into_flat_prior_posterior()),
        FitKey::Bayes => {
            let prior = cfg
                .model
                .bayes
                .as_ref()
                .expect("bayes key implies a prior")
                .prior(design.x.ncols())?;
            Ok(fit_bayes(design, &prior)?)
        }
    }
}

fn estimate_value(e: EffectEstimate, warnings: &mut Vec<String>) -> Value {
    flag_non_finite(
        &[
            ("estimate", e.estimate),
            ("std_error", e.std_error),
            ("ci_low", e.ci_low),
            ("ci_high", e.ci_high),
        ],
        warnings,
    );
    serde_json::to_value(e).expect("estimate serializes")
}

fn with_level(
    e: EffectEstimate,
    level: Option<f64>,
) -> std::result::Result<EffectEstimate, EngineError> {
    match level {
        Some(l) => e.at_level(l),
        None => Ok(e),
    }
}

fn answer(
    q: &Query,
    model: &FittedModel,
    data: &Dataset,
    opts: &OrthantOptions,
    warnings: &mut Vec<String>,
) -> std::result::Result<Value, EngineError> {
    let pred = q.predicate.as_deref().map(Predicate::parse).transpose()?;
    let (to, from) = match q.arms.as_slice() {
        [a, b] => (a.as_str(), b.as_str()),
        _ => ("", ""),
    };
    Ok(match q.kind {
        QueryType::Ate => match &pred {
            Some(p) => estimate_value(
                with_level(cate(model, data, to, from, p)?, q.ci_level)?,
                warnings,
            ),
            None => estimate_value(
                with_level(ate(model, data, to, from)?, q.ci_level)?,
                warnings,
            ),
        },
        QueryType::Cate => {
            let p = pred.as_ref().expect("checked in config");
            estimate_value(
                with_level(cate(model, data, to, from, p)?, q.ci_level)?,
                warnings,
            )
        }
        QueryType::Hte => {
            let p = pred.as_ref().expect("checked in config");
            estimate_value(
                with_level(hte(model, data, to, from, p)?, q.ci_level)?,
                warnings,
            )
        }
        QueryType::Dte => {
            let periods: Vec<i64> = match &q.periods {
                Some(ps) => ps.clone(),
                None => data.periods().into_iter().collect(),
            };
            let mut out = Vec::new();
            for e in dte(model, data, to, from, &periods)? {
                out.push(estimate_value(with_level(e, q.ci_level)?, warnings));
            }
            json!({ "estimates": out })
        }
        QueryType::Relative => {
            let mut r = relative_effect(model, data, to, from, pred.as_ref())?;
            warnings.append(&mut r.warnings);
            let c = r.components;
            flag_non_finite(
                &[
                    ("are", r.are),
                    ("variance", r.variance),
                    ("first_order", r.first_order),
                    ("components.er", c.er),
                    ("components.es", c.es),
                    ("components.var_r", c.var_r),
                    ("components.var_s", c.var_s),
                    ("components.cov_rs", c.cov_rs),
                ],
                warnings,
            );
            let se = r.std_error();
            let mut v = serde_json::to_value(&r).expect("ratio serializes");
            v["std_error"] = json!(se);
            v
        }
        QueryType::Rank => {
            let arms: Vec<String> = if q.arms.is_empty() {
                model.schema.all_arms()
            } else {
                q.arms.clone()
            };
            let r = prob_best(model, data, &arms, pred.as_ref(), opts)?;
            for a in &r.arms {
                flag_non_finite(
                    &[
                        ("prob_best", a.prob_best),
                        ("integration_error", a.integration_error),
                    ],
                    warnings,
                );
            }
            let total = r.total();
            let mut v = serde_json::to_value(&r).expect("ranking serializes");
            v["total"] = json!(total);
            v
        }
    })
}

/// Same error kind, message prefixed with its context.
fn prefixed(e: &CliError, context: &str) -> CliError {
    match e {
        CliError::Numeric(m) => CliError::Numeric(format!("{context}: {m}")),
        other => CliError::Validation(format!("{context}: {other}")),
    }
}

fn error_record(e: &CliError) -> ErrorRecord {
    ErrorRecord {
        kind: if e.exit_code() == 2 {
            "numeric"
        } else {
            "validation"
        }
        .into(),
        message: e.to_string(),
    }
}

/// Runs the pipeline and returns the report without writing it.
pub fn build_report(
    cfg: &QueryConfig,
    config_bytes: &[u8],
    data_bytes: &[u8],
    seed: u64,
    flat_prior_ok: bool,
    partial: bool,
) -> Result<Report> {
    let data = parse_csv(data_bytes, &cfg.data, &cfg.model.encodings)?;
    cfg.check_data(&data)?;
    let keys: Vec<FitKey> = cfg
        .queries
        .iter()
        .enumerate()
        .map(|(i, q)| fit_key(cfg, q, i, flat_prior_ok))
        .collect::<Result<_>>()?;

    let mut spec = ModelSpec::new(cfg.model.reference_arm.clone());
    spec.encodings = cfg.model.encodings.clone();
    let design = build_design(&data, &spec)?;
    let mut warnings = design.warnings.clone();

    let mut distinct = keys.clone();
    distinct.sort();
    distinct.dedup();
    log::info!(
        "fitting {} model(s) for {} queries",
        distinct.len(),
        keys.len()
    );
    let fitted: BTreeMap<FitKey, Result<FittedModel>> = distinct
        .par_iter()
        .map(|&k| (k, fit_one(k, &design, &data, cfg)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    if !partial {
        if let Some((k, Err(e))) = fitted.iter().find(|(_, r)| r.is_err()) {
            return Err(prefixed(e, &format!("fit {}", k.id())));
        }
    }

    let opts = cfg.orthant_options(seed);
    let results: Vec<(QueryResult, Option<CliError>)> = cfg
        .queries
        .par_iter()
        .enumerate()
        .map(|(index, q)| {
            let key = keys[index];
            let mut qwarn = Vec::new();
            let outcome = match &fitted[&key] {
                Ok(model) => answer(q, model, &data, &opts, &mut qwarn).map_err(CliError::from),
                Err(e) => Err(prefixed(e, &format!("fit {}", key.id()))),
            };
            let (status, result, error) = match outcome {
                Ok(v) => (Status::Ok, Some(v), None),
                Err(e) => (Status::Error, None, Some(e)),
            };
            (
                QueryResult {
                    index,
                    kind: q.kind.as_str().into(),
                    arms: q.arms.clone(),
                    predicate: q.predicate.clone(),
                    status,
                    model: Some(key.id()),
                    result,
                    error: error.as_ref().map(error_record),
                    warnings: qwarn,
                },
                error,
            )
        })
        .collect();

    let mut out = Vec::with_capacity(results.len());
    for (r, err) in results {
        if let Some(e) = err {
            if !partial {
                return Err(prefixed(&e, &format!("query {}", r.index)));
            }
        }
        out.push(r);
    }

    let models = fitted
        .iter()
        .filter_map(|(k, m)| {
            m.as_ref()
                .ok()
                .map(|m| ModelSummary::new(k.id(), k.kind(), m, &mut warnings))
        })
        .collect();
    Ok(Report {
        report_version: REPORT_VERSION.into(),
        metadata: Metadata {
            engine_version: env!("CARGO_PKG_VERSION").into(),
            input_sha256: sha256_hex(data_bytes),
            config_sha256: sha256_hex(config_bytes),
            seed,
            mvn_tol: cfg.mvn_tol,
            generated_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        },
        models,
        results: out,
        warnings,
    })
}

/// Runs the pipeline and writes the report. Returns the output path, or
/// `None` when the report went to stdout.
pub fn run(opts: &RunOptions) -> Result<Option<PathBuf>> {
    let (cfg, config_bytes) = QueryConfig::load(&opts.config)?;
    let data_bytes = std::fs::read(&opts.data).map_err(|e| CliError::io(&opts.data, e))?;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let partial = opts.partial || cfg.partial;
    let report = build_report(
        &cfg,
        &config_bytes,
        &data_bytes,
        seed,
        opts.flat_prior_ok,
        partial,
    )?;
    let rendered = match cfg.output.format {
        OutputFormat::Json => to_json(&report),
        OutputFormat::Text => to_text(&report),
    };
    match opts.out.clone().or_else(|| cfg.output.path.clone()) {
        Some(path) => {
            write_atomic(&path, &rendered)?;
            Ok(Some(path))
        }
        None => {
            print!("{rendered}");
            Ok(None)
        }
    }
}

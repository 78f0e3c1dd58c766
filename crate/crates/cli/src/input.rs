//! CSV ingestion.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use effect_core::data::{CovariateValue, Dataset, Record};
use effect_core::design::Encoding;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Which CSV columns play which role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMap {
    pub outcome: String,
    pub arm: String,
    /// Defaults to every column not named elsewhere in the map.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<String>,
}

pub fn load_csv(
    path: &Path,
    map: &ColumnMap,
    encodings: &BTreeMap<String, Encoding>,
) -> Result<Dataset> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CliError::io(path, e))?;
    parse_csv(&bytes, map, encodings)
}

fn column(headers: &[String], name: &str, role: &str) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| {
        CliError::Validation(format!("{role} column `{name}` not found in CSV header"))
    })
}

fn parse_number(cell: &str, row: usize, name: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| {
        CliError::Validation(format!(
            "row {row}, column `{name}`: cannot parse `{cell}` as a number"
        ))
    })?;
    if !v.is_finite() {
        return Err(CliError::Validation(format!(
            "row {row}, column `{name}`: non-finite value `{cell}`"
        )));
    }
    Ok(v)
}

/// Parses UTF-8 CSV bytes. Rows are numbered from 1, excluding the header.
pub fn parse_csv(
    bytes: &[u8],
    map: &ColumnMap,
    encodings: &BTreeMap<String, Encoding>,
) -> Result<Dataset> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| CliError::Validation(format!("CSV is not valid UTF-8: {e}")))?;
    if text.trim().is_empty() {
        return Err(CliError::Validation("CSV file is empty".into()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Validation(format!("CSV header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut seen = std::collections::BTreeSet::new();
    for h in &headers {
        if !seen.insert(h) {
            return Err(CliError::Validation(format!("duplicate CSV column `{h}`")));
        }
    }

    let y_col = column(&headers, &map.outcome, "outcome")?;
    let arm_col = column(&headers, &map.arm, "arm")?;
    let unit_col = map
        .unit_id
        .as_deref()
        .map(|c| column(&headers, c, "unit_id"))
        .transpose()?;
    let period_col = map
        .period
        .as_deref()
        .map(|c| column(&headers, c, "period"))
        .transpose()?;
    let reserved: Vec<usize> = [Some(y_col), Some(arm_col), unit_col, period_col]
        .into_iter()
        .flatten()
        .collect();
    let cov_cols: Vec<usize> = match &map.covariates {
        Some(names) => names
            .iter()
            .map(|c| column(&headers, c, "covariate"))
            .collect::<Result<_>>()?,
        None => (0..headers.len())
            .filter(|i| !reserved.contains(i))
            .collect(),
    };
    if let Some(c) = cov_cols.iter().find(|c| reserved.contains(c)) {
        return Err(CliError::Validation(format!(
            "column `{}` cannot be both a covariate and a role column",
            headers[*c]
        )));
    }
    for name in encodings.keys() {
        if !cov_cols.iter().any(|&c| headers[c] == *name) {
            return Err(CliError::Validation(format!(
                "encoding given for `{name}`, which is not a covariate"
            )));
        }
    }

    let mut raw: Vec<Vec<String>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Validation(format!("row {}: {e}", i + 1)))?;
        raw.push(rec.iter().map(str::to_string).collect());
    }
    if raw.is_empty() {
        return Err(CliError::Validation(
            "CSV has a header but no data rows".into(),
        ));
    }

    // A covariate is numeric when declared so, or when undeclared and every cell parses.
    let numeric: Vec<bool> = cov_cols
        .iter()
        .map(|&c| match encodings.get(&headers[c]) {
            Some(Encoding::Numeric) => true,
            Some(Encoding::Categorical) => false,
            None => raw
                .iter()
                .all(|r| r[c].trim().parse::<f64>().is_ok_and(f64::is_finite)),
        })
        .collect();

    let mut rows = Vec::with_capacity(raw.len());
    for (i, cells) in raw.iter().enumerate() {
        let row = i + 1;
        let outcome = parse_number(&cells[y_col], row, &map.outcome)?;
        let arm = cells[arm_col].clone();
        if arm.is_empty() {
            return Err(CliError::Validation(format!(
                "row {row}, column `{}`: empty arm label",
                map.arm
            )));
        }
        let mut covariates = Vec::with_capacity(cov_cols.len());
        for (&c, &is_num) in cov_cols.iter().zip(&numeric) {
            let cell = &cells[c];
            if is_num {
                covariates.push(CovariateValue::Numeric(parse_number(
                    cell,
                    row,
                    &headers[c],
                )?));
            } else if cell.is_empty() {
                return Err(CliError::Validation(format!(
                    "row {row}, column `{}`: empty cell",
                    headers[c]
                )));
            } else {
                covariates.push(CovariateValue::Level(cell.clone()));
            }
        }
        let unit_id = unit_col.map(|c| cells[c].clone());
        let period = period_col
            .map(|c| {
                cells[c].trim().parse::<i64>().map_err(|_| {
                    CliError::Validation(format!(
                        "row {row}, column `{}`: cannot parse `{}` as an integer period",
                        headers[c], cells[c]
                    ))
                })
            })
            .transpose()?;
        rows.push(Record {
            outcome,
            arm,
            covariates,
            unit_id,
            period,
        });
    }
    let names = cov_cols.iter().map(|&c| headers[c].clone()).collect();
    Ok(Dataset::new(names, rows)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map() -> ColumnMap {
        ColumnMap {
            outcome: "y".into(),
            arm: "w".into(),
            covariates: None,
            unit_id: None,
            period: None,
        }
    }

    fn parse(text: &str) -> Result<Dataset> {
        parse_csv(text.as_bytes(), &map(), &BTreeMap::new())
    }

    #[test]
    fn four_rows() {
        let d = parse("y,w\n1,0\n3,0\n4,1\n6,1\n").unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.arms().into_iter().collect::<Vec<_>>(), vec!["0", "1"]);
    }

    #[test]
    fn reports_bad_cell_position() {
        let err = parse("y,w\n1,0\nNA,1\n").unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("`y`"), "{err}");
    }

    #[test]
    fn infers_categorical_and_handles_quotes() {
        let d = parse("y,w,city\n1,a,\"New York, NY\"\n2,b,Boston\n3,a,Boston\n").unwrap();
        assert_eq!(d.covariate_names(), ["city"]);
        assert_eq!(
            d.rows()[0].covariates[0],
            CovariateValue::Level("New York, NY".into())
        );
    }

    #[test]
    fn declared_numeric_must_parse() {
        let mut enc = BTreeMap::new();
        enc.insert("x".to_string(), Encoding::Numeric);
        let err = parse_csv(b"y,w,x\n1,a,2\n2,b,oops\n", &map(), &enc)
            .unwrap_err()
            .to_string();
        assert!(err.contains("row 2") && err.contains("`x`"), "{err}");
    }

    #[test]
    fn empty_and_missing() {
        assert!(parse("").unwrap_err().to_string().contains("empty"));
        assert!(parse("y,w\n")
            .unwrap_err()
            .to_string()
            .contains("no data rows"));
        assert!(parse("y,v\n1,0\n").unwrap_err().to_string().contains("`w`"));
    }
}

//! Result tables: `squared_errors.csv` (one row per estimator and seed) and
//! `summary.csv` (scores per estimator, raw and normalized by the best).
//!
//! Floats are written in Rust's shortest round-trip form, so re-reading
//! `squared_errors.csv` reproduces every value bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::metrics::normalize;
use crate::evaluator::{EstimatorResults, Record, ResultSet, ScoreTable};

pub const SQUARED_ERRORS_FILE: &str = "squared_errors.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, Serialize, Deserialize)]
struct ErrorRow {
    estimator: String,
    seed: u64,
    policy_id: String,
    theta_digest: String,
    squared_error: f64,
    flagged: bool,
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    estimator: &'a str,
    mean: f64,
    au_cdf: f64,
    cvar: f64,
    std: f64,
    mean_normalized: f64,
    au_cdf_normalized: f64,
    cvar_normalized: f64,
    std_normalized: f64,
    n_records: usize,
    n_flagged: usize,
    z_max: f64,
    cvar_alpha: f64,
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })
}

fn finish(path: &Path, mut w: csv::Writer<std::fs::File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_squared_errors(results: &ResultSet, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    for e in &results.estimators {
        for r in &e.records {
            w.serialize(ErrorRow {
                estimator: e.estimator.clone(),
                seed: r.seed,
                policy_id: r.policy_id.clone(),
                theta_digest: r.theta_digest.clone(),
                squared_error: r.squared_error,
                flagged: r.flagged,
            })
            .map_err(|source| Error::Csv {
                path: path.to_path_buf(),
                source,
            })?;
        }
    }
    finish(path, w)
}

pub fn write_summary(scores: &ScoreTable, path: &Path) -> Result<()> {
    let col = |f: fn(&crate::evaluator::SummaryScores) -> f64| -> Vec<f64> {
        scores.rows.iter().map(|r| f(&r.scores)).collect()
    };
    let mean = normalize(&col(|s| s.mean), false);
    let au = normalize(&col(|s| s.au_cdf), true);
    let cvar = normalize(&col(|s| s.cvar), false);
    let std = normalize(&col(|s| s.std), false);
    let mut w = writer(path)?;
    for (i, r) in scores.rows.iter().enumerate() {
        w.serialize(SummaryRow {
            estimator: &r.estimator,
            mean: r.scores.mean,
            au_cdf: r.scores.au_cdf,
            cvar: r.scores.cvar,
            std: r.scores.std,
            mean_normalized: mean[i],
            au_cdf_normalized: au[i],
            cvar_normalized: cvar[i],
            std_normalized: std[i],
            n_records: r.n_records,
            n_flagged: r.n_flagged,
            z_max: scores.z_max,
            cvar_alpha: scores.alpha,
        })
        .map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    }
    finish(path, w)
}

/// Writes both tables into `dir`, creating it if needed.
pub fn export_results(results: &ResultSet, scores: &ScoreTable, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_squared_errors(results, &dir.join(SQUARED_ERRORS_FILE))?;
    write_summary(scores, &dir.join(SUMMARY_FILE))
}

/// Reads a `squared_errors.csv` back into a result set. Estimators keep
/// their first-appearance order and records their file order.
pub fn read_squared_errors(path: &Path) -> Result<ResultSet> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut out: Vec<EstimatorResults> = Vec::new();
    for (i, row) in reader.deserialize::<ErrorRow>().enumerate() {
        let row = row.map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            row: i + 2,
            column: "*".into(),
            reason: e.to_string(),
        })?;
        if row.squared_error.is_nan() || row.squared_error < 0.0 {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                row: i + 2,
                column: "squared_error".into(),
                reason: format!("{} is not a nonnegative number", row.squared_error),
            });
        }
        let record = Record {
            seed: row.seed,
            policy_id: row.policy_id,
            theta_digest: row.theta_digest,
            squared_error: row.squared_error,
            flagged: row.flagged,
        };
        match out.iter_mut().find(|e| e.estimator == row.estimator) {
            Some(e) => e.records.push(record),
            None => out.push(EstimatorResults {
                estimator: row.estimator,
                records: vec![record],
            }),
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(ResultSet { estimators: out })
}

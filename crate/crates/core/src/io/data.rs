//! CSV ingestion: logged feedback, classification data and policy tables.
//!
//! Schema errors report the file line (the header is line 1).

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;

use crate::bandit::{ActionDistribution, LoggedBanditFeedback};
use crate::datagen::ClassificationDataset;
use crate::error::{Error, Result};

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if !e.is_io_error() {
        return Error::Csv {
            path: path.to_path_buf(),
            source: e,
        };
    }
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        _ => unreachable!("checked io error"),
    }
}

fn schema(path: &Path, row: usize, column: &str, reason: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        reason: reason.into(),
    }
}

/// Indices of the feature columns `f0, f1, ...` that open the header.
fn feature_columns(path: &Path, header: &csv::StringRecord) -> Result<usize> {
    let mut d = 0;
    while header.get(d) == Some(format!("f{d}").as_str()) {
        d += 1;
    }
    if d == 0 {
        return Err(schema(path, 1, header.get(0).unwrap_or(""), "expected feature column `f0`"));
    }
    Ok(d)
}

fn expect_columns(path: &Path, header: &csv::StringRecord, from: usize, names: &[&str]) -> Result<()> {
    for (j, name) in names.iter().enumerate() {
        match header.get(from + j) {
            Some(h) if h == *name => {}
            Some(h) => return Err(schema(path, 1, h, format!("expected column `{name}`"))),
            None => return Err(schema(path, 1, name, "missing column")),
        }
    }
    Ok(())
}

struct Row<'a> {
    path: &'a Path,
    line: usize,
    header: &'a csv::StringRecord,
    record: csv::StringRecord,
}

impl Row<'_> {
    fn field(&self, j: usize) -> Result<&str> {
        let col = self.header.get(j).unwrap_or("?");
        self.record
            .get(j)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| schema(self.path, self.line, col, "missing value"))
    }

    fn float(&self, j: usize) -> Result<f64> {
        let raw = self.field(j)?;
        let col = self.header.get(j).unwrap_or("?");
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(schema(self.path, self.line, col, format!("`{raw}` is not a finite number"))),
        }
    }

    fn index(&self, j: usize) -> Result<usize> {
        let raw = self.field(j)?;
        let col = self.header.get(j).unwrap_or("?");
        raw.parse::<usize>()
            .map_err(|_| schema(self.path, self.line, col, format!("`{raw}` is not a nonnegative integer")))
    }
}

fn rows<'a>(
    path: &'a Path,
    reader: &'a mut csv::Reader<std::fs::File>,
    header: &'a csv::StringRecord,
) -> impl Iterator<Item = Result<Row<'a>>> + 'a {
    reader.records().map(move |r| {
        let record = r.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            match e.kind() {
                csv::ErrorKind::UnequalLengths { .. } => schema(path, line, "*", "wrong number of fields"),
                _ => csv_error(path, e),
            }
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        Ok(Row {
            path,
            line,
            header,
            record,
        })
    })
}

/// Optional overrides for quantities not stored in a feedback file.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FeedbackOptions {
    /// One more than the largest logged action when unset.
    pub n_actions: Option<usize>,
    /// 1 for binary rewards and the largest reward otherwise when unset.
    pub r_max: Option<f64>,
    /// Fail with a missing-propensity error when the column is absent.
    pub require_propensities: bool,
}

/// Reads `f0..f{d-1},action,reward[,propensity]`.
pub fn load_feedback_csv(path: &Path, opts: FeedbackOptions) -> Result<LoggedBanditFeedback> {
    let mut reader = open(path)?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let d = feature_columns(path, &header)?;
    expect_columns(path, &header, d, &["action", "reward"])?;
    let has_prop = match header.get(d + 2) {
        None => false,
        Some("propensity") if header.len() == d + 3 => true,
        Some(h) => return Err(schema(path, 1, h, "unexpected column")),
    };
    if opts.require_propensities && !has_prop {
        return Err(Error::MissingPropensities);
    }

    let mut features = Vec::new();
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut props = Vec::new();
    for row in rows(path, &mut reader, &header) {
        let row = row?;
        for j in 0..d {
            features.push(row.float(j)?);
        }
        let a = row.index(d)?;
        if let Some(k) = opts.n_actions {
            if a >= k {
                return Err(schema(path, row.line, "action", format!("{a} is not below n_actions = {k}")));
            }
        }
        actions.push(a);
        let r = row.float(d + 1)?;
        if r < 0.0 {
            return Err(schema(path, row.line, "reward", format!("negative reward {r}")));
        }
        if let Some(r_max) = opts.r_max {
            if r > r_max {
                return Err(schema(path, row.line, "reward", format!("{r} exceeds r_max = {r_max}")));
            }
        }
        rewards.push(r);
        if has_prop {
            let p = row.float(d + 2)?;
            if !(p > 0.0 && p <= 1.0) {
                return Err(schema(path, row.line, "propensity", format!("{p} is not in (0, 1]")));
            }
            props.push(p);
        }
    }
    let n = actions.len();
    if n == 0 {
        return Err(Error::EmptyFeedback);
    }
    let n_actions = opts
        .n_actions
        .unwrap_or_else(|| actions.iter().copied().max().unwrap_or(0) + 1)
        .max(2);
    let binary = rewards.iter().all(|&r| r == 0.0 || r == 1.0);
    let r_max = opts.r_max.unwrap_or_else(|| {
        let max = rewards.iter().copied().fold(0.0, f64::max);
        if binary || max == 0.0 {
            1.0
        } else {
            max
        }
    });
    let contexts = Array2::from_shape_vec((n, d), features).expect("row-major features");
    LoggedBanditFeedback::new(contexts, actions, rewards, has_prop.then_some(props), n_actions, r_max)
}

/// Reads `f0..f{d-1},label`.
pub fn load_classification_csv(path: &Path, n_classes: Option<usize>) -> Result<ClassificationDataset> {
    let mut reader = open(path)?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let d = feature_columns(path, &header)?;
    expect_columns(path, &header, d, &["label"])?;
    if let Some(h) = header.get(d + 1) {
        return Err(schema(path, 1, h, "unexpected column"));
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for row in rows(path, &mut reader, &header) {
        let row = row?;
        for j in 0..d {
            features.push(row.float(j)?);
        }
        let y = row.index(d)?;
        if let Some(k) = n_classes {
            if y >= k {
                return Err(schema(path, row.line, "label", format!("{y} is not below n_classes = {k}")));
            }
        }
        labels.push(y);
    }
    if labels.is_empty() {
        return Err(Error::EmptyFeedback);
    }
    let k = n_classes.unwrap_or_else(|| labels.iter().copied().max().unwrap_or(0) + 1);
    let features = Array2::from_shape_vec((labels.len(), d), features).expect("row-major features");
    ClassificationDataset::new(features, labels, k)
}

/// A policy table: rows `key,p0..p{K-1}` with keys `<dataset id>:<row>`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub n_actions: usize,
    rows: HashMap<String, HashMap<usize, Vec<f64>>>,
}

impl PolicyTable {
    /// The distribution over all `n` rows of `dataset`, `None` if the table
    /// has no rows for it, and a schema error if only some rows are present.
    pub fn distribution(&self, path: &Path, dataset: &str, n: usize) -> Result<Option<ActionDistribution>> {
        let Some(by_row) = self.rows.get(dataset) else {
            return Ok(None);
        };
        let mut probs = Array2::zeros((n, self.n_actions));
        for i in 0..n {
            let p = by_row
                .get(&i)
                .ok_or_else(|| schema(path, 0, "key", format!("no row for `{dataset}:{i}`")))?;
            for (a, v) in p.iter().enumerate() {
                probs[[i, a]] = *v;
            }
        }
        if let Some(extra) = by_row.keys().find(|&&i| i >= n) {
            return Err(schema(path, 0, "key", format!("`{dataset}:{extra}` is past the end of the dataset")));
        }
        ActionDistribution::new(probs).map(Some)
    }

    pub fn datasets(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }
}

pub fn load_policy_csv(path: &Path) -> Result<PolicyTable> {
    let mut reader = open(path)?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    expect_columns(path, &header, 0, &["key"])?;
    let k = header.len() - 1;
    for a in 0..k {
        expect_columns(path, &header, a + 1, &[&format!("p{a}")])?;
    }
    if k < 2 {
        return Err(schema(path, 1, "p1", "at least two action columns are required"));
    }
    let mut table: HashMap<String, HashMap<usize, Vec<f64>>> = HashMap::new();
    for row in rows(path, &mut reader, &header) {
        let row = row?;
        let key = row.field(0)?;
        let (dataset, idx) = key
            .rsplit_once(':')
            .and_then(|(d, i)| i.parse::<usize>().ok().map(|i| (d.to_string(), i)))
            .ok_or_else(|| schema(path, row.line, "key", format!("`{key}` is not `<dataset>:<row>`")))?;
        let mut p = Vec::with_capacity(k);
        for a in 0..k {
            let v = row.float(a + 1)?;
            if v < 0.0 {
                return Err(schema(path, row.line, &format!("p{a}"), format!("negative probability {v}")));
            }
            p.push(v);
        }
        if table.entry(dataset).or_default().insert(idx, p).is_some() {
            return Err(schema(path, row.line, "key", format!("duplicate key `{key}`")));
        }
    }
    Ok(PolicyTable { n_actions: k, rows: table })
}

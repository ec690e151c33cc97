use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("reward {value} at index {index} is outside [0, {r_max}]")]
    RewardOutOfRange { index: usize, value: f64, r_max: f64 },

    #[error("propensity {value} at index {index} is not strictly positive")]
    NonPositivePropensity { index: usize, value: f64 },

    #[error("action {action} at index {index} is out of range for {n_actions} actions")]
    ActionOutOfRange {
        index: usize,
        action: usize,
        n_actions: usize,
    },

    #[error("feedback must contain at least one observation")]
    EmptyFeedback,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("row {row} of the action distribution is not stochastic (sum {sum}, min {min})")]
    NotStochastic { row: usize, sum: f64, min: f64 },

    #[error("logged propensities are required but missing")]
    MissingPropensities,

    #[error("estimated propensity at logged index {index} is zero")]
    ZeroEstimatedPropensity { index: usize },

    #[error("importance weights sum to zero")]
    ZeroWeightSum,

    #[error("unknown estimator `{0}`")]
    UnknownEstimator(String),

    #[error("estimator `{0}` requires a reward prediction matrix")]
    MissingRewardModel(&'static str),

    #[error("fold index sets do not form an equal-size partition: {0}")]
    NotAPartition(String),

    #[error("cannot fit a model on an empty row subset")]
    EmptySubset,

    #[error("requested {k} folds but only {n} rows are available")]
    TooManyFolds { k: usize, n: usize },

    #[error("linear system is singular: {0}")]
    SingularSystem(String),

    #[error("model family {family} does not support {purpose}")]
    UnsupportedFamily {
        family: &'static str,
        purpose: &'static str,
    },

    #[error("optimizer failed: {0}")]
    Optimizer(String),

    #[error("hyperparameter space is empty")]
    EmptySpace,

    #[error("confidence delta {0} is outside (0, 1]")]
    DeltaOutOfRange(f64),

    #[error("at least {needed} samples are required, found {found}")]
    TooFewSamples { needed: usize, found: usize },

    #[error("input sample is empty")]
    EmptyInput,

    #[error("z_max must be positive, got {0}")]
    NonPositiveZmax(f64),

    #[error("alpha {0} is outside [0, 1)")]
    AlphaOutOfRange(f64),

    #[error("at least two logged datasets are required, found {0}")]
    FewerThanTwoDatasets(usize),

    #[error("candidate grid is empty")]
    EmptyGrid,

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid configuration field `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("schema violation in {path} at row {row}, column `{column}`: {reason}")]
    Schema {
        path: PathBuf,
        row: usize,
        column: String,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("thread pool: {0}")]
    ThreadPool(String),

    #[error("estimator {estimator} failed on seed {seed}: {source}")]
    EstimatorFailed {
        estimator: String,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Configuration problems (as opposed to data or runtime problems).
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. } | Error::Validation { .. } | Error::UnknownEstimator(_)
        )
    }

    /// Problems with ingested data files.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Schema { .. }
                | Error::Csv { .. }
                | Error::MissingPropensities
                | Error::RewardOutOfRange { .. }
                | Error::NonPositivePropensity { .. }
                | Error::ActionOutOfRange { .. }
                | Error::EmptyFeedback
                | Error::NotStochastic { .. }
                | Error::DimensionMismatch { .. }
        )
    }
}

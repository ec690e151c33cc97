//! Off-policy evaluation for contextual bandits and the IEOE protocol, which
//! scores an estimator by the distribution of its squared error across
//! randomly sampled hyperparameters, evaluation policies and bootstrap
//! resamples.

pub mod bandit;
pub mod datagen;
pub mod error;
pub mod estimators;
pub mod evaluator;
pub mod io;
pub mod models;
pub mod tuning;

pub use error::{Error, Result};

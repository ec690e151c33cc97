//! Configuration files, dataset ingestion and result emission.

pub mod config;
pub mod data;
pub mod export;
pub mod plot;
pub mod run;

pub use config::{load_config, parse_config, DataSource, ExperimentConfig, Mode, OutputSettings};
pub use data::{load_classification_csv, load_feedback_csv, load_policy_csv, FeedbackOptions, PolicyTable};
pub use export::{export_results, read_squared_errors, SQUARED_ERRORS_FILE, SUMMARY_FILE};
pub use plot::{cdf_points, render_cdf_plot, POINTS_FILE};
pub use run::{prepare_data, run_experiment, PreparedData};

//! TOML experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::datagen::{default_policy_preset, PolicyPreset, RewardKind, TRAIN_FRACTION};
use crate::error::{Error, Result};
use crate::evaluator::{
    BehaviorEstimation, EstimatorSetup, EvaluatedEstimator, IeoeConfig, ModelChoice, PropensityMode, SamplerMode,
    PROPENSITY_FLOOR,
};
use crate::models::{Calibration, HyperparamSpace};
use crate::tuning::DEFAULT_DELTA;

/// Default CVaR level.
pub const DEFAULT_CVAR_ALPHA: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Synthetic,
    Classification,
    Realworld,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Synthetic => "synthetic",
            Mode::Classification => "classification",
            Mode::Realworld => "realworld",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRange {
    #[serde(default)]
    pub start: u64,
    pub count: usize,
}

impl Default for SeedRange {
    fn default() -> Self {
        Self { start: 0, count: 500 }
    }
}

impl SeedRange {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.count as u64).map(|i| self.start + i).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ProtocolSection {
    sampler: SamplerMode,
    bootstrap_size: Option<usize>,
    delta: f64,
    model_search_iters: Option<usize>,
    workers: Option<usize>,
    fail_fast: bool,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            sampler: SamplerMode::UniformRandom,
            bootstrap_size: None,
            delta: DEFAULT_DELTA,
            model_search_iters: None,
            workers: None,
            fail_fast: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
enum PropensitySection {
    #[default]
    True,
    Estimated {
        models: Option<Vec<ModelChoice>>,
        calibration: Option<Calibration>,
        floor: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum EstimatorEntry {
    Name(String),
    Full(EstimatorTable),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimatorTable {
    name: String,
    reward_models: Option<Vec<ModelChoice>>,
    k_folds: Option<Vec<usize>>,
    lambda_grid: Option<Vec<f64>>,
    tau_grid: Option<Vec<f64>>,
}

/// Base action rule of a synthetic evaluation policy before mixing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticBase {
    /// Argmax of the true expected reward.
    Optimal,
    /// Argmax of the behavior policy.
    BehaviorGreedy,
    /// A fixed action.
    Constant,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticPolicy {
    pub name: String,
    pub base: SyntheticBase,
    #[serde(default)]
    pub action: Option<usize>,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSource {
    pub n: usize,
    pub dim_context: usize,
    pub n_actions: usize,
    pub reward_kind: RewardKind,
    pub r_max: f64,
    pub env_seed: u64,
    pub log_seed: u64,
    /// Monte Carlo contexts for each policy's ground-truth value.
    pub n_mc: usize,
    pub policies: Vec<SyntheticPolicy>,
}

impl Default for SyntheticSource {
    fn default() -> Self {
        let p = |name: &str, base, alpha| SyntheticPolicy {
            name: name.to_string(),
            base,
            action: None,
            alpha,
        };
        Self {
            n: 1000,
            dim_context: 5,
            n_actions: 10,
            reward_kind: RewardKind::Binary,
            r_max: 1.0,
            env_seed: 0,
            log_seed: 1,
            n_mc: 100_000,
            policies: vec![
                p("optimal_0.8", SyntheticBase::Optimal, 0.8),
                p("optimal_0.2", SyntheticBase::Optimal, 0.2),
                p("behavior_greedy_0.8", SyntheticBase::BehaviorGreedy, 0.8),
                p("behavior_greedy_0.2", SyntheticBase::BehaviorGreedy, 0.2),
                p("uniform", SyntheticBase::Uniform, 0.0),
            ],
        }
    }
}

/// Gaussian-cluster classification data generated in place of a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratedClassification {
    pub n: usize,
    pub dim: usize,
    pub n_classes: usize,
    pub spread: f64,
    pub seed: u64,
}

impl Default for GeneratedClassification {
    fn default() -> Self {
        Self {
            n: 5000,
            dim: 10,
            n_classes: 10,
            spread: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassificationSource {
    /// CSV with columns `f0..f{d-1},label`. Generated data is used when unset.
    pub path: Option<PathBuf>,
    /// Number of classes; one more than the largest label when unset.
    pub n_classes: Option<usize>,
    pub generate: GeneratedClassification,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub log_seed: u64,
    pub behavior: PolicyPreset,
    pub policies: Vec<PolicyPreset>,
}

impl Default for ClassificationSource {
    fn default() -> Self {
        let (behavior, policies) = default_policy_preset();
        Self {
            path: None,
            n_classes: None,
            generate: GeneratedClassification::default(),
            train_fraction: TRAIN_FRACTION,
            split_seed: 0,
            log_seed: 0,
            behavior,
            policies,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub id: String,
    /// Logged feedback CSV.
    pub feedback: PathBuf,
    /// Action distributions of the policy that logged `feedback`, keyed by
    /// `<dataset id>:<row>` over the other datasets' rows.
    pub policy: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealworldSource {
    /// Action count; inferred from the data when unset.
    pub n_actions: Option<usize>,
    /// Reward bound; 1 for binary rewards and the largest reward otherwise
    /// when unset.
    pub r_max: Option<f64>,
    pub datasets: Vec<DatasetEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSource),
    Classification(ClassificationSource),
    Realworld(RealworldSource),
}

impl DataSource {
    pub fn mode(&self) -> Mode {
        match self {
            DataSource::Synthetic(_) => Mode::Synthetic,
            DataSource::Classification(_) => Mode::Classification,
            DataSource::Realworld(_) => Mode::Realworld,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    pub dir: Option<PathBuf>,
    /// AU-CDF cutoff; the 99th percentile of pooled finite errors when unset.
    pub z_max: Option<f64>,
    pub cvar_alpha: f64,
    /// Leave flagged (failed) runs out of the AU-CDF.
    pub exclude_flagged: bool,
    pub plot: bool,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self {
            dir: None,
            z_max: None,
            cvar_alpha: DEFAULT_CVAR_ALPHA,
            exclude_flagged: false,
            plot: true,
        }
    }
}

impl OutputSettings {
    pub fn validate(&self) -> Result<()> {
        if let Some(z) = self.z_max {
            if !(z > 0.0 && z.is_finite()) {
                return Err(Error::validation("output.z_max", format!("must be positive and finite, got {z}")));
            }
        }
        if !(0.0..1.0).contains(&self.cvar_alpha) {
            return Err(Error::validation(
                "output.cvar_alpha",
                format!("must be in [0, 1), got {}", self.cvar_alpha),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: Option<Mode>,
    #[serde(default)]
    seeds: SeedRange,
    #[serde(default)]
    protocol: ProtocolSection,
    #[serde(default)]
    propensities: PropensitySection,
    reward_models: Option<Vec<ModelChoice>>,
    #[serde(default)]
    model_space: BTreeMap<String, HyperparamSpace>,
    estimators: Vec<EstimatorEntry>,
    synthetic: Option<SyntheticSource>,
    classification: Option<ClassificationSource>,
    realworld: Option<RealworldSource>,
    #[serde(default)]
    output: OutputSettings,
}

/// A validated experiment: protocol settings, estimators, data source and
/// output settings. Relative paths are resolved against the config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub ieoe: IeoeConfig,
    pub estimators: Vec<EstimatorSetup>,
    pub data: DataSource,
    pub output: OutputSettings,
}

impl ExperimentConfig {
    pub fn mode(&self) -> Mode {
        self.data.mode()
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base).map_err(|e| match e {
        Error::Parse { message, .. } => Error::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

/// Parses config text, resolving relative data paths against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Parse {
        path: PathBuf::from("<config>"),
        message: e.to_string().trim_end().to_string(),
    })?;
    resolve(raw, base)
}

fn resolve(raw: RawConfig, base: &Path) -> Result<ExperimentConfig> {
    let data = resolve_data(&raw, base)?;
    if raw.seeds.count == 0 {
        return Err(Error::validation("seeds.count", "must be >= 1"));
    }
    raw.seeds
        .start
        .checked_add(raw.seeds.count as u64 - 1)
        .ok_or_else(|| Error::validation("seeds", "range overflows u64"))?;

    let propensities = match raw.propensities {
        PropensitySection::True => PropensityMode::True,
        PropensitySection::Estimated {
            models,
            calibration,
            floor,
        } => {
            let defaults = BehaviorEstimation::default();
            PropensityMode::Estimated(BehaviorEstimation {
                models: models.unwrap_or(defaults.models),
                calibration: calibration.unwrap_or(defaults.calibration),
                floor: floor.unwrap_or(PROPENSITY_FLOOR),
            })
        }
    };
    let p = raw.protocol;
    let ieoe = IeoeConfig {
        seeds: raw.seeds.seeds(),
        sampler: p.sampler,
        bootstrap_size: p.bootstrap_size,
        delta: p.delta,
        propensities,
        model_search_iters: p.model_search_iters,
        workers: p.workers,
        fail_fast: p.fail_fast,
        model_spaces: raw.model_space,
    };
    ieoe.validate().map_err(|e| match e {
        Error::Validation { field, reason } if is_protocol_field(&field) => Error::Validation {
            field: format!("protocol.{field}"),
            reason,
        },
        other => other,
    })?;

    if raw.estimators.is_empty() {
        return Err(Error::validation("estimators", "must not be empty"));
    }
    let mut estimators = Vec::with_capacity(raw.estimators.len());
    for (i, entry) in raw.estimators.into_iter().enumerate() {
        let table = match entry {
            EstimatorEntry::Name(name) => EstimatorTable {
                name,
                reward_models: None,
                k_folds: None,
                lambda_grid: None,
                tau_grid: None,
            },
            EstimatorEntry::Full(t) => t,
        };
        let estimator = EvaluatedEstimator::from_str(&table.name).map_err(|_| {
            Error::validation(format!("estimators[{i}].name"), format!("unknown estimator `{}`", table.name))
        })?;
        let mut setup = EstimatorSetup::new(estimator);
        if let Some(m) = table.reward_models.or_else(|| raw.reward_models.clone()) {
            setup.reward_models = m;
        }
        if let Some(k) = table.k_folds {
            setup.k_folds = k;
        }
        if let Some(g) = table.lambda_grid {
            setup.lambda_grid = g;
        }
        if let Some(g) = table.tau_grid {
            setup.tau_grid = g;
        }
        setup.validate()?;
        if estimators.iter().any(|s: &EstimatorSetup| s.estimator == estimator) {
            return Err(Error::validation("estimators", format!("`{estimator}` listed twice")));
        }
        estimators.push(setup);
    }

    raw.output.validate()?;
    let mut output = raw.output;
    output.dir = output.dir.map(|d| base.join(d));
    Ok(ExperimentConfig {
        ieoe,
        estimators,
        data,
        output,
    })
}

fn is_protocol_field(field: &str) -> bool {
    matches!(field, "delta" | "bootstrap_size" | "model_search_iters" | "workers")
}

fn resolve_data(raw: &RawConfig, base: &Path) -> Result<DataSource> {
    let present: Vec<Mode> = [
        (Mode::Synthetic, raw.synthetic.is_some()),
        (Mode::Classification, raw.classification.is_some()),
        (Mode::Realworld, raw.realworld.is_some()),
    ]
    .into_iter()
    .filter_map(|(m, p)| p.then_some(m))
    .collect();
    let mode = match (raw.mode, present.as_slice()) {
        (Some(m), _) => m,
        (None, [m]) => *m,
        (None, []) => return Err(Error::validation("mode", "no data section; set `mode` or add one")),
        (None, _) => return Err(Error::validation("mode", "several data sections; set `mode`")),
    };
    match mode {
        Mode::Synthetic => {
            let s = raw.synthetic.clone().unwrap_or_default();
            validate_synthetic(&s)?;
            Ok(DataSource::Synthetic(s))
        }
        Mode::Classification => {
            let mut c = raw.classification.clone().unwrap_or_default();
            c.path = c.path.map(|p| base.join(p));
            validate_classification(&c)?;
            Ok(DataSource::Classification(c))
        }
        Mode::Realworld => {
            let mut r = raw
                .realworld
                .clone()
                .ok_or_else(|| Error::validation("realworld", "section is required in realworld mode"))?;
            for d in &mut r.datasets {
                d.feedback = base.join(&d.feedback);
                d.policy = base.join(&d.policy);
            }
            validate_realworld(&r)?;
            Ok(DataSource::Realworld(r))
        }
    }
}

fn validate_synthetic(s: &SyntheticSource) -> Result<()> {
    let bad = |f: &str, r: String| Err(Error::validation(format!("synthetic.{f}"), r));
    if s.n == 0 {
        return bad("n", "must be >= 1".into());
    }
    if s.n_actions < 2 {
        return bad("n_actions", "must be >= 2".into());
    }
    if s.dim_context == 0 {
        return bad("dim_context", "must be >= 1".into());
    }
    if !(s.r_max > 0.0 && s.r_max.is_finite()) {
        return bad("r_max", format!("must be positive and finite, got {}", s.r_max));
    }
    if s.n_mc == 0 {
        return bad("n_mc", "must be >= 1".into());
    }
    if s.policies.is_empty() {
        return bad("policies", "must not be empty".into());
    }
    for (i, p) in s.policies.iter().enumerate() {
        if !(0.0..=1.0).contains(&p.alpha) {
            return bad(&format!("policies[{i}].alpha"), format!("must be in [0, 1], got {}", p.alpha));
        }
        match (p.base, p.action) {
            (SyntheticBase::Constant, None) => {
                return bad(&format!("policies[{i}].action"), "required for a constant policy".into())
            }
            (SyntheticBase::Constant, Some(a)) if a >= s.n_actions => {
                return bad(&format!("policies[{i}].action"), format!("must be < n_actions = {}", s.n_actions))
            }
            (SyntheticBase::Uniform, _) if p.alpha != 0.0 => {
                return bad(&format!("policies[{i}].alpha"), "must be 0 for a uniform policy".into())
            }
            _ => {}
        }
    }
    unique_names(s.policies.iter().map(|p| p.name.as_str()), "synthetic.policies")
}

fn unique_names<'a>(names: impl Iterator<Item = &'a str>, field: &str) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(Error::validation(field, format!("duplicate name `{n}`")));
        }
    }
    Ok(())
}

fn validate_preset(p: &PolicyPreset, field: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&p.alpha) {
        return Err(Error::validation(
            format!("{field}.alpha"),
            format!("must be in [0, 1], got {}", p.alpha),
        ));
    }
    match &p.classifier {
        None if p.alpha != 0.0 => Err(Error::validation(
            format!("{field}.alpha"),
            "must be 0 without a classifier",
        )),
        Some(spec) => spec
            .validate()
            .map_err(|e| Error::validation(format!("{field}.classifier"), e.to_string())),
        None => Ok(()),
    }
}

fn validate_classification(c: &ClassificationSource) -> Result<()> {
    if let Some(p) = &c.path {
        if !p.is_file() {
            return Err(Error::validation(
                "classification.path",
                format!("file {} does not exist", p.display()),
            ));
        }
    } else {
        let g = &c.generate;
        if g.n == 0 || g.dim == 0 || g.n_classes < 2 {
            return Err(Error::validation(
                "classification.generate",
                "needs n >= 1, dim >= 1 and n_classes >= 2",
            ));
        }
    }
    if !(c.train_fraction > 0.0 && c.train_fraction < 1.0) {
        return Err(Error::validation(
            "classification.train_fraction",
            format!("must be in (0, 1), got {}", c.train_fraction),
        ));
    }
    validate_preset(&c.behavior, "classification.behavior")?;
    if c.policies.is_empty() {
        return Err(Error::validation("classification.policies", "must not be empty"));
    }
    for (i, p) in c.policies.iter().enumerate() {
        validate_preset(p, &format!("classification.policies[{i}]"))?;
    }
    unique_names(c.policies.iter().map(|p| p.name.as_str()), "classification.policies")
}

fn validate_realworld(r: &RealworldSource) -> Result<()> {
    if r.datasets.len() < 2 {
        return Err(Error::validation("realworld.datasets", "at least two datasets are required"));
    }
    for (i, d) in r.datasets.iter().enumerate() {
        if d.id.is_empty() || d.id.contains(':') {
            return Err(Error::validation(
                format!("realworld.datasets[{i}].id"),
                "must be nonempty and contain no `:`",
            ));
        }
        for (what, p) in [("feedback", &d.feedback), ("policy", &d.policy)] {
            if !p.is_file() {
                return Err(Error::validation(
                    format!("realworld.datasets[{i}].{what}"),
                    format!("file {} does not exist", p.display()),
                ));
            }
        }
    }
    if let Some(r_max) = r.r_max {
        if !(r_max > 0.0 && r_max.is_finite()) {
            return Err(Error::validation("realworld.r_max", "must be positive and finite"));
        }
    }
    unique_names(r.datasets.iter().map(|d| d.id.as_str()), "realworld.datasets")
}

//! The IEOE protocol: run each estimator under randomly sampled
//! hyperparameters, evaluation policies and bootstrap resamples, collect the
//! squared errors, and summarize their distribution.
//!
//! Every seed owns independent random streams (policy draw, bootstrap,
//! reward-model folds, behavior-model fits, and one hyperparameter stream
//! per estimator), so records do not depend on the number of workers or on
//! which other estimators are evaluated.

pub mod metrics;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bandit::{
    compute_importance_weights, ActionDistribution, ImportanceWeights, LoggedBanditFeedback, Policy,
    PropensitySource, RewardPredictionMatrix,
};
use crate::error::{Error, Result};
use crate::estimators::{
    cross_fit_estimate, estimate, EstimatorHyperparams, EstimatorKind, Fold, ShrinkageParam,
};
use crate::models::{
    cross_fit_reward_matrices, fit_behavior_policy, random_search, sample_spec, Calibration, HyperparamSpace,
    ModelFamily, ModelSpec, SearchTarget,
};
use crate::tuning::{select_hyperparameter, DEFAULT_DELTA, DEFAULT_GRID};
pub use metrics::{au_cdf, auto_z_max, cvar, empirical_cdf, mean_score, std_score, EmpiricalCdf, SummaryScores};

/// Floor applied to estimated behavior probabilities.
pub const PROPENSITY_FLOOR: f64 = 1e-7;

/// Independent generator for one (seed, stream label) pair.
pub fn stream_rng(seed: u64, label: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let mut key = [0u8; 32];
    key.copy_from_slice(&h.finalize());
    ChaCha8Rng::from_seed(key)
}

fn digest(text: &str) -> String {
    let d = Sha256::digest(text.as_bytes());
    hex::encode(&d[..8])
}

/// An estimator under evaluation. `Oracle` returns the ground truth and
/// serves as a sanity check of the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EvaluatedEstimator {
    Standard(EstimatorKind),
    Oracle,
}

impl EvaluatedEstimator {
    pub fn name(self) -> &'static str {
        match self {
            EvaluatedEstimator::Standard(k) => k.name(),
            EvaluatedEstimator::Oracle => "oracle",
        }
    }
}

impl fmt::Display for EvaluatedEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvaluatedEstimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("oracle") {
            Ok(EvaluatedEstimator::Oracle)
        } else {
            s.parse().map(EvaluatedEstimator::Standard)
        }
    }
}

impl TryFrom<String> for EvaluatedEstimator {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EvaluatedEstimator> for String {
    fn from(e: EvaluatedEstimator) -> String {
        e.name().to_string()
    }
}

/// A model family as written in a configuration. `Linear` is logistic
/// regression for binary rewards (and for behavior policies) and ridge
/// regression otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyChoice {
    Linear,
    Logistic,
    Ridge,
    Boosting,
}

impl FamilyChoice {
    pub fn resolve(self, binary_target: bool) -> ModelFamily {
        match self {
            FamilyChoice::Linear if binary_target => ModelFamily::Logistic,
            FamilyChoice::Linear => ModelFamily::Ridge,
            FamilyChoice::Logistic => ModelFamily::Logistic,
            FamilyChoice::Ridge => ModelFamily::Ridge,
            FamilyChoice::Boosting => ModelFamily::Boosting,
        }
    }
}

/// One candidate model family with its hyperparameter ranges (family
/// defaults when `space` is absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelChoice {
    pub family: FamilyChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<HyperparamSpace>,
}

impl ModelChoice {
    pub fn new(family: FamilyChoice) -> Self {
        Self { family, space: None }
    }

    pub fn with_space(family: FamilyChoice, space: HyperparamSpace) -> Self {
        Self {
            family,
            space: Some(space),
        }
    }

    fn space_for(&self, family: ModelFamily, overrides: &BTreeMap<String, HyperparamSpace>) -> HyperparamSpace {
        self.space
            .clone()
            .or_else(|| overrides.get(family.name()).cloned())
            .unwrap_or_else(|| family.default_space())
    }

    fn validate(&self, field: &str) -> Result<()> {
        let Some(space) = &self.space else {
            return Ok(());
        };
        if space.is_empty() {
            return Err(Error::validation(field, "model space is empty"));
        }
        for (name, range) in space {
            range.validate(name)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for binary in [true, false] {
            let family = self.family.resolve(binary);
            sample_spec(family, space, &mut rng).map_err(|e| Error::validation(field, e.to_string()))?;
        }
        Ok(())
    }
}

pub fn default_reward_models() -> Vec<ModelChoice> {
    vec![ModelChoice::new(FamilyChoice::Linear), ModelChoice::new(FamilyChoice::Boosting)]
}

/// The candidate space `Theta` of one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSetup {
    pub estimator: EvaluatedEstimator,
    pub reward_models: Vec<ModelChoice>,
    pub k_folds: Vec<usize>,
    pub lambda_grid: Vec<f64>,
    pub tau_grid: Vec<f64>,
}

impl EstimatorSetup {
    /// Two model families, `K in {1..5}` and the default lambda/tau grid.
    pub fn new(estimator: EvaluatedEstimator) -> Self {
        Self {
            estimator,
            reward_models: default_reward_models(),
            k_folds: (1..=5).collect(),
            lambda_grid: DEFAULT_GRID.to_vec(),
            tau_grid: DEFAULT_GRID.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let name = self.estimator.name();
        let EvaluatedEstimator::Standard(kind) = self.estimator else {
            return Ok(());
        };
        if kind.uses_reward_model() {
            if self.reward_models.is_empty() {
                return Err(Error::validation(format!("estimators.{name}.reward_models"), "must not be empty"));
            }
            for m in &self.reward_models {
                m.validate(&format!("estimators.{name}.reward_models"))?;
            }
            if self.k_folds.is_empty() || self.k_folds.contains(&0) {
                return Err(Error::validation(
                    format!("estimators.{name}.k_folds"),
                    "must be a nonempty list of integers >= 1",
                ));
            }
        }
        let grid = match kind.shrinkage_param() {
            Some(ShrinkageParam::Lambda) => Some(("lambda_grid", &self.lambda_grid)),
            Some(ShrinkageParam::Tau) => Some(("tau_grid", &self.tau_grid)),
            None => None,
        };
        if let Some((field, grid)) = grid {
            if grid.is_empty() || grid.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::validation(
                    format!("estimators.{name}.{field}"),
                    "must be a nonempty list of values >= 0",
                ));
            }
        }
        Ok(())
    }
}

/// How `phi` draws `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    /// Every component uniformly from its candidate set.
    #[default]
    UniformRandom,
    /// Model components uniformly; lambda/tau by minimizing the bias bound
    /// plus variance on the bootstrap sample.
    TunedEstimatorParams,
}

/// How the behavior policy entering the importance weights is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum PropensityMode {
    /// Logged propensities.
    True,
    Estimated(BehaviorEstimation),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorEstimation {
    pub models: Vec<ModelChoice>,
    pub calibration: Calibration,
    pub floor: f64,
}

impl Default for BehaviorEstimation {
    fn default() -> Self {
        Self {
            models: vec![ModelChoice::new(FamilyChoice::Logistic), ModelChoice::new(FamilyChoice::Boosting)],
            calibration: Calibration::TemperatureScaling { holdout_fraction: 0.5 },
            floor: PROPENSITY_FLOOR,
        }
    }
}

/// Protocol settings shared by both algorithms.
#[derive(Debug, Clone, PartialEq)]
pub struct IeoeConfig {
    pub seeds: Vec<u64>,
    pub sampler: SamplerMode,
    /// Bootstrap resample size; the dataset size when unset.
    pub bootstrap_size: Option<usize>,
    pub delta: f64,
    pub propensities: PropensityMode,
    /// When set, reward and behavior model hyperparameters are chosen by a
    /// randomized search with this many candidates instead of sampled.
    pub model_search_iters: Option<usize>,
    /// Worker threads; the rayon default when unset.
    pub workers: Option<usize>,
    /// Abort on the first estimator failure instead of flagging it.
    pub fail_fast: bool,
    /// Replacement hyperparameter spaces keyed by family name, used by model
    /// choices that carry no space of their own.
    pub model_spaces: BTreeMap<String, HyperparamSpace>,
}

impl IeoeConfig {
    pub fn new(seeds: Vec<u64>) -> Self {
        Self {
            seeds,
            sampler: SamplerMode::UniformRandom,
            bootstrap_size: None,
            delta: DEFAULT_DELTA,
            propensities: PropensityMode::True,
            model_search_iters: None,
            workers: None,
            fail_fast: false,
            model_spaces: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::validation("seeds", "must not be empty"));
        }
        let distinct: BTreeSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return Err(Error::validation("seeds", "must be distinct"));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::validation("delta", format!("must be in (0, 1], got {}", self.delta)));
        }
        if self.bootstrap_size == Some(0) {
            return Err(Error::validation("bootstrap_size", "must be >= 1"));
        }
        if self.model_search_iters == Some(0) {
            return Err(Error::validation("model_search_iters", "must be >= 1"));
        }
        if self.workers == Some(0) {
            return Err(Error::validation("workers", "must be >= 1"));
        }
        for (name, space) in &self.model_spaces {
            let field = format!("model_space.{name}");
            let family = match name.as_str() {
                "logistic" => ModelFamily::Logistic,
                "ridge" => ModelFamily::Ridge,
                "boosting" => ModelFamily::Boosting,
                _ => return Err(Error::validation(field, "unknown model family")),
            };
            for (param, range) in space {
                range.validate(param)?;
            }
            sample_spec(family, space, &mut ChaCha8Rng::seed_from_u64(0))
                .map_err(|e| Error::validation(&field, e.to_string()))?;
        }
        if let PropensityMode::Estimated(b) = &self.propensities {
            if b.models.is_empty() {
                return Err(Error::validation("behavior_models", "must not be empty"));
            }
            for m in &b.models {
                if m.family.resolve(true) == ModelFamily::Ridge {
                    return Err(Error::validation("behavior_models", "ridge cannot estimate a policy"));
                }
                m.validate("behavior_models")?;
            }
            if !(b.floor >= 0.0 && b.floor < 1.0) {
                return Err(Error::validation("propensity_floor", format!("must be in [0, 1), got {}", b.floor)));
            }
        }
        Ok(())
    }
}

/// An evaluation policy evaluated at every row of a task's logged data.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationPolicy {
    pub id: String,
    pub dist: ActionDistribution,
    /// Ground-truth policy value.
    pub value: f64,
}

/// Logged data with a set of evaluation policies of known value.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditTask {
    pub feedback: LoggedBanditFeedback,
    pub policies: Vec<EvaluationPolicy>,
}

impl BanditTask {
    pub fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            return Err(Error::validation("policies", "must not be empty"));
        }
        for p in &self.policies {
            p.dist.check_shape(&self.feedback)?;
            if !p.value.is_finite() {
                return Err(Error::invalid("policy value", format!("{} has value {}", p.id, p.value)));
            }
        }
        Ok(())
    }
}

/// One logged dataset for the real-world protocol, together with the action
/// distribution of the policy that collected it evaluated on every
/// dataset's contexts (`policy_on[k]` covers dataset `k`; the entry for the
/// dataset itself may be absent).
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedDataset {
    pub id: String,
    pub feedback: LoggedBanditFeedback,
    pub policy_on: Vec<Option<ActionDistribution>>,
}

/// One (estimator, seed) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub seed: u64,
    pub policy_id: String,
    pub theta_digest: String,
    pub squared_error: f64,
    /// The estimator failed; `squared_error` is infinite.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorResults {
    pub estimator: String,
    /// In seed order.
    pub records: Vec<Record>,
}

/// The squared-error sample `Z` of every estimator.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultSet {
    pub estimators: Vec<EstimatorResults>,
}

/// Summary scores of one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub estimator: String,
    pub scores: SummaryScores,
    pub n_records: usize,
    pub n_flagged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub z_max: f64,
    pub alpha: f64,
    pub rows: Vec<ScoreRow>,
}

impl ResultSet {
    pub fn get(&self, estimator: &str) -> Option<&EstimatorResults> {
        self.estimators.iter().find(|e| e.estimator == estimator)
    }

    pub fn squared_errors(&self, estimator: &str) -> Option<Vec<f64>> {
        self.get(estimator)
            .map(|e| e.records.iter().map(|r| r.squared_error).collect())
    }

    fn sample(e: &EstimatorResults, exclude_flagged: bool) -> Vec<f64> {
        e.records
            .iter()
            .filter(|r| !(exclude_flagged && r.flagged))
            .map(|r| r.squared_error)
            .collect()
    }

    /// Every squared error across estimators.
    pub fn pooled(&self, exclude_flagged: bool) -> Vec<f64> {
        self.estimators.iter().flat_map(|e| Self::sample(e, exclude_flagged)).collect()
    }

    /// Scores per estimator. `z_max` defaults to [`auto_z_max`] of the pooled
    /// errors. Flagged records carry infinite errors; with `exclude_flagged`
    /// they are left out of the AU-CDF integration (mean, CVaR and Std always
    /// see every record).
    pub fn scores(&self, z_max: Option<f64>, alpha: f64, exclude_flagged: bool) -> Result<ScoreTable> {
        let z_max = z_max.unwrap_or_else(|| auto_z_max(&self.pooled(exclude_flagged)));
        let rows = self
            .estimators
            .iter()
            .map(|e| {
                let z = Self::sample(e, false);
                let mut scores = SummaryScores::compute(&z, z_max, alpha)?;
                if exclude_flagged {
                    let kept = Self::sample(e, true);
                    scores.au_cdf = if kept.is_empty() { 0.0 } else { au_cdf(&kept, z_max)? };
                }
                Ok(ScoreRow {
                    estimator: e.estimator.clone(),
                    scores,
                    n_records: e.records.len(),
                    n_flagged: e.records.iter().filter(|r| r.flagged).count(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScoreTable { z_max, alpha, rows })
    }
}

/// What a seed evaluates: logged data, an evaluation policy on its rows and
/// that policy's true value.
struct Scenario {
    policy_id: String,
    feedback: Arc<LoggedBanditFeedback>,
    eval_dist: ActionDistribution,
    value: f64,
}

/// Runs the protocol with classification or synthetic data, where every
/// evaluation policy's value is known.
pub fn run_algorithm1(config: &IeoeConfig, task: &BanditTask, setups: &[EstimatorSetup]) -> Result<ResultSet> {
    task.validate()?;
    let feedback = Arc::new(task.feedback.clone());
    let scenarios: Vec<Scenario> = task
        .policies
        .iter()
        .map(|p| Scenario {
            policy_id: p.id.clone(),
            feedback: Arc::clone(&feedback),
            eval_dist: p.dist.clone(),
            value: p.value,
        })
        .collect();
    run_scenarios(config, &scenarios, setups)
}

/// Runs the protocol on logs from several policies: each seed holds one
/// dataset out as the on-policy test set and evaluates its policy on the
/// union of the others.
pub fn run_algorithm2(config: &IeoeConfig, datasets: &[LoggedDataset], setups: &[EstimatorSetup]) -> Result<ResultSet> {
    let l = datasets.len();
    if l < 2 {
        return Err(Error::FewerThanTwoDatasets(l));
    }
    let mut scenarios = Vec::with_capacity(l);
    for (j, test) in datasets.iter().enumerate() {
        if test.policy_on.len() != l {
            return Err(Error::DimensionMismatch {
                what: "policy distributions per dataset",
                expected: l,
                found: test.policy_on.len(),
            });
        }
        let mut parts = Vec::with_capacity(l - 1);
        let mut dists = Vec::with_capacity(l - 1);
        for (k, other) in datasets.iter().enumerate().filter(|(k, _)| *k != j) {
            let dist = test.policy_on[k].as_ref().ok_or_else(|| {
                Error::validation(
                    format!("policies.{}", test.id),
                    format!("missing action distribution on dataset `{}`", other.id),
                )
            })?;
            dist.check_shape(&other.feedback)?;
            parts.push(&other.feedback);
            dists.push(dist);
        }
        scenarios.push(Scenario {
            policy_id: test.id.clone(),
            feedback: Arc::new(LoggedBanditFeedback::concat(&parts)?),
            eval_dist: ActionDistribution::concat(&dists)?,
            value: test.feedback.mean_reward(),
        });
    }
    run_scenarios(config, &scenarios, setups)
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| Error::ThreadPool(e.to_string()))?;
    Ok(pool.install(f))
}

fn run_scenarios(config: &IeoeConfig, scenarios: &[Scenario], setups: &[EstimatorSetup]) -> Result<ResultSet> {
    config.validate()?;
    if setups.is_empty() {
        return Err(Error::validation("estimators", "must not be empty"));
    }
    let mut names = BTreeSet::new();
    for s in setups {
        s.validate()?;
        if !names.insert(s.estimator.name()) {
            return Err(Error::validation("estimators", format!("`{}` listed twice", s.estimator)));
        }
    }
    let per_seed: Vec<Result<Vec<Record>>> = with_pool(config.workers, || {
        config
            .seeds
            .par_iter()
            .map(|&seed| SeedRun::new(config, scenarios, seed).run(setups))
            .collect()
    })?;
    let mut out: Vec<EstimatorResults> = setups
        .iter()
        .map(|s| EstimatorResults {
            estimator: s.estimator.name().to_string(),
            records: Vec::with_capacity(config.seeds.len()),
        })
        .collect();
    for records in per_seed {
        for (slot, rec) in out.iter_mut().zip(records?) {
            slot.records.push(rec);
        }
    }
    Ok(ResultSet { estimators: out })
}

/// Reward-model spec to use: a fixed draw or a search within a family.
#[derive(Debug, Clone)]
enum ModelPick {
    Fixed(ModelSpec),
    Search(ModelFamily, HyperparamSpace),
}

impl ModelPick {
    fn draw(
        choice: &ModelChoice,
        overrides: &BTreeMap<String, HyperparamSpace>,
        binary_target: bool,
        search: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let family = choice.family.resolve(binary_target);
        let space = choice.space_for(family, overrides);
        if search {
            Ok(ModelPick::Search(family, space))
        } else {
            Ok(ModelPick::Fixed(sample_spec(family, &space, rng)?))
        }
    }

    fn key(&self) -> String {
        match self {
            ModelPick::Fixed(s) => s.to_string(),
            ModelPick::Search(f, space) => format!("search:{f}:{space:?}"),
        }
    }
}

/// The sampled `theta` of one estimator on one seed.
struct Theta {
    reward: Option<(ModelPick, usize)>,
    shrinkage: Option<f64>,
    behavior: Option<ModelPick>,
}

/// Per-seed state: the bootstrap sample and caches of fitted models shared
/// by the estimators evaluated on it.
struct SeedRun<'a> {
    config: &'a IeoeConfig,
    seed: u64,
    scenario: &'a Scenario,
    fb: LoggedBanditFeedback,
    eval: ActionDistribution,
    fold_seed: u64,
    search_seed: u64,
    behavior_seed: u64,
    searched: HashMap<String, ModelSpec>,
    folds: HashMap<(String, usize), Arc<Vec<Fold>>>,
    behavior: HashMap<String, Arc<ActionDistribution>>,
    weights: HashMap<String, Arc<ImportanceWeights>>,
}

impl<'a> SeedRun<'a> {
    fn new(config: &'a IeoeConfig, scenarios: &'a [Scenario], seed: u64) -> Self {
        let j = stream_rng(seed, "policy").random_range(0..scenarios.len());
        let scenario = &scenarios[j];
        let n = scenario.feedback.n();
        let m = config.bootstrap_size.unwrap_or(n);
        let mut rng = stream_rng(seed, "bootstrap");
        let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
        let mut model_rng = stream_rng(seed, "reward-model");
        let fold_seed = model_rng.next_u64();
        let search_seed = model_rng.next_u64();
        let behavior_seed = stream_rng(seed, "behavior-model").next_u64();
        Self {
            config,
            seed,
            scenario,
            fb: scenario.feedback.subset(&idx),
            eval: scenario.eval_dist.subset(&idx),
            fold_seed,
            search_seed,
            behavior_seed,
            searched: HashMap::new(),
            folds: HashMap::new(),
            behavior: HashMap::new(),
            weights: HashMap::new(),
        }
    }

    fn run(mut self, setups: &[EstimatorSetup]) -> Result<Vec<Record>> {
        setups.iter().map(|s| self.record(s)).collect()
    }

    fn record(&mut self, setup: &EstimatorSetup) -> Result<Record> {
        let truth = self.scenario.value;
        let (theta_text, outcome) = match setup.estimator {
            EvaluatedEstimator::Oracle => ("oracle".to_string(), Ok(truth)),
            EvaluatedEstimator::Standard(kind) => {
                let mut rng = stream_rng(self.seed, &format!("hyperparam/{}", kind.name()));
                let theta = self.sample_theta(kind, setup, &mut rng)?;
                let mut text = String::new();
                let outcome = self.evaluate(kind, setup, &theta, &mut text);
                (text, outcome)
            }
        };
        let (squared_error, flagged) = match outcome {
            Ok(v) => ((truth - v) * (truth - v), false),
            Err(e) => {
                if self.config.fail_fast {
                    return Err(Error::EstimatorFailed {
                        estimator: setup.estimator.name().to_string(),
                        seed: self.seed,
                        source: Box::new(e),
                    });
                }
                log::warn!("{} failed on seed {}: {e}", setup.estimator, self.seed);
                (f64::INFINITY, true)
            }
        };
        log::debug!("seed {} {}: {theta_text} -> {squared_error}", self.seed, setup.estimator);
        Ok(Record {
            seed: self.seed,
            policy_id: self.scenario.policy_id.clone(),
            theta_digest: digest(&theta_text),
            squared_error,
            flagged,
        })
    }

    fn sample_theta(&self, kind: EstimatorKind, setup: &EstimatorSetup, rng: &mut ChaCha8Rng) -> Result<Theta> {
        let search = self.config.model_search_iters.is_some();
        let reward = if kind.uses_reward_model() {
            let choice = &setup.reward_models[rng.random_range(0..setup.reward_models.len())];
            let pick = ModelPick::draw(choice, &self.config.model_spaces, self.fb.has_binary_rewards(), search, rng)?;
            let k = setup.k_folds[rng.random_range(0..setup.k_folds.len())];
            Some((pick, k))
        } else {
            None
        };
        let grid = match kind.shrinkage_param() {
            Some(ShrinkageParam::Lambda) => Some(&setup.lambda_grid),
            Some(ShrinkageParam::Tau) => Some(&setup.tau_grid),
            None => None,
        };
        let shrinkage = match (grid, self.config.sampler) {
            (Some(g), SamplerMode::UniformRandom) => Some(g[rng.random_range(0..g.len())]),
            _ => None,
        };
        let behavior = match &self.config.propensities {
            PropensityMode::Estimated(b) if kind.uses_weights() => {
                let choice = &b.models[rng.random_range(0..b.models.len())];
                Some(ModelPick::draw(choice, &self.config.model_spaces, true, search, rng)?)
            }
            _ => None,
        };
        Ok(Theta {
            reward,
            shrinkage,
            behavior,
        })
    }

    fn resolve(&mut self, pick: &ModelPick, fb: &LoggedBanditFeedback, target: SearchTarget) -> Result<ModelSpec> {
        match pick {
            ModelPick::Fixed(spec) => Ok(spec.clone()),
            ModelPick::Search(family, space) => {
                let key = format!("{target:?}:{}", pick.key());
                if let Some(s) = self.searched.get(&key) {
                    return Ok(s.clone());
                }
                let iters = self.config.model_search_iters.unwrap_or(1);
                let spec = random_search(space, *family, fb, iters, self.search_seed, target)?;
                self.searched.insert(key, spec.clone());
                Ok(spec)
            }
        }
    }

    fn importance_weights(&mut self, theta: &Theta, text: &mut String) -> Result<Arc<ImportanceWeights>> {
        let Some(pick) = &theta.behavior else {
            text.push_str("pi_b=logged;");
            if let Some(w) = self.weights.get("logged") {
                return Ok(Arc::clone(w));
            }
            let w = Arc::new(compute_importance_weights(&self.eval, &self.fb, PropensitySource::LoggedTrue)?);
            self.weights.insert("logged".into(), Arc::clone(&w));
            return Ok(w);
        };
        let PropensityMode::Estimated(est) = &self.config.propensities else {
            unreachable!("behavior model drawn without estimation mode");
        };
        let (calibration, floor) = (est.calibration, est.floor);
        let fb = self.fb.clone();
        let spec = self.resolve(pick, &fb, SearchTarget::BehaviorPolicy)?;
        let key = spec.to_string();
        text.push_str(&format!("pi_b={key};"));
        if let Some(w) = self.weights.get(&key) {
            return Ok(Arc::clone(w));
        }
        let dist = match self.behavior.get(&key) {
            Some(d) => Arc::clone(d),
            None => {
                let model = fit_behavior_policy(&spec, &self.fb, calibration, self.behavior_seed)?;
                let raw = model.action_distribution(self.fb.contexts.view())?;
                let (floored, below) = raw.floored(floor);
                if below > 0 {
                    log::debug!("seed {}: {below} estimated probabilities floored at {floor}", self.seed);
                }
                let d = Arc::new(floored);
                self.behavior.insert(key.clone(), Arc::clone(&d));
                d
            }
        };
        let w = Arc::new(compute_importance_weights(
            &self.eval,
            &self.fb,
            PropensitySource::EstimatedDistribution(&dist),
        )?);
        self.weights.insert(key, Arc::clone(&w));
        Ok(w)
    }

    fn cross_fit(&mut self, spec: &ModelSpec, k: usize, fb: &LoggedBanditFeedback) -> Result<Arc<Vec<Fold>>> {
        let key = (spec.to_string(), k);
        if let Some(f) = self.folds.get(&key) {
            return Ok(Arc::clone(f));
        }
        let folds = Arc::new(cross_fit_reward_matrices(spec, fb, k, self.fold_seed)?);
        self.folds.insert(key, Arc::clone(&folds));
        Ok(folds)
    }

    fn evaluate(&mut self, kind: EstimatorKind, setup: &EstimatorSetup, theta: &Theta, text: &mut String) -> Result<f64> {
        let weights = if kind.uses_weights() {
            self.importance_weights(theta, text)?
        } else {
            Arc::new(ImportanceWeights::from_weights(vec![1.0; self.fb.n()])?)
        };
        let mut params = EstimatorHyperparams::default();
        let grid = match kind.shrinkage_param() {
            Some(ShrinkageParam::Lambda) => Some(&setup.lambda_grid),
            Some(ShrinkageParam::Tau) => Some(&setup.tau_grid),
            None => None,
        };
        let Some((pick, k)) = &theta.reward else {
            if let Some(grid) = grid {
                let v = match theta.shrinkage {
                    Some(v) => v,
                    None => select_hyperparameter(kind, grid, &self.fb, &self.eval, &weights, None, self.config.delta)?,
                };
                set_shrinkage(&mut params, kind, v);
                text.push_str(&format!("shrinkage={v};"));
            }
            return Ok(estimate(kind, &self.fb, &self.eval, &weights, None, &params)?.value);
        };
        let k = *k;
        let m = self.fb.n() - self.fb.n() % k;
        if m == 0 {
            return Err(Error::TooManyFolds { k, n: self.fb.n() });
        }
        let rows: Vec<usize> = (0..m).collect();
        let (fb, eval, w) = if m == self.fb.n() {
            (self.fb.clone(), self.eval.clone(), (*weights).clone())
        } else {
            (self.fb.subset(&rows), self.eval.subset(&rows), weights.subset(&rows))
        };
        let full = self.fb.clone();
        let spec = self.resolve(pick, &full, SearchTarget::Reward)?;
        text.push_str(&format!("q={spec};K={k};"));
        let folds = self.cross_fit(&spec, k, &fb)?;
        params.k_folds = k;
        params.reward_model = Some(spec);
        if let Some(grid) = grid {
            let v = match theta.shrinkage {
                Some(v) => v,
                None => {
                    let q = out_of_fold(&folds, m, fb.n_actions)?;
                    select_hyperparameter(kind, grid, &fb, &eval, &w, Some(&q), self.config.delta)?
                }
            };
            set_shrinkage(&mut params, kind, v);
            text.push_str(&format!("shrinkage={v};"));
        }
        Ok(cross_fit_estimate(&fb, &eval, &w, kind, &params, &folds)?.value)
    }
}

fn set_shrinkage(params: &mut EstimatorHyperparams, kind: EstimatorKind, v: f64) {
    match kind.shrinkage_param() {
        Some(ShrinkageParam::Lambda) => params.lambda = v,
        Some(ShrinkageParam::Tau) => params.tau = v,
        None => {}
    }
}

/// Stitches per-fold predictions into one matrix over all rows.
fn out_of_fold(folds: &[Fold], n: usize, n_actions: usize) -> Result<RewardPredictionMatrix> {
    let mut values = ndarray::Array2::zeros((n, n_actions));
    for fold in folds {
        for (r, &i) in fold.indices.iter().enumerate() {
            for a in 0..n_actions {
                values[[i, a]] = fold.predictions.get(r, a);
            }
        }
    }
    RewardPredictionMatrix::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn task() -> BanditTask {
        let n = 40;
        let contexts = Array2::from_shape_fn((n, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0);
        let actions: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let rewards: Vec<f64> = (0..n).map(|i| ((i / 2) % 2) as f64).collect();
        let fb = LoggedBanditFeedback::new(contexts, actions, rewards, Some(vec![0.5; n]), 2, 1.0).unwrap();
        let mut probs = Array2::from_elem((n, 2), 0.5);
        for i in 0..n {
            probs[[i, 0]] = 0.7;
            probs[[i, 1]] = 0.3;
        }
        BanditTask {
            feedback: fb,
            policies: vec![
                EvaluationPolicy {
                    id: "a".into(),
                    dist: ActionDistribution::new(probs).unwrap(),
                    value: 0.5,
                },
                EvaluationPolicy {
                    id: "u".into(),
                    dist: ActionDistribution::uniform(n, 2),
                    value: 0.5,
                },
            ],
        }
    }

    fn setups(names: &[&str]) -> Vec<EstimatorSetup> {
        names
            .iter()
            .map(|n| {
                let mut s = EstimatorSetup::new(n.parse().unwrap());
                s.reward_models = vec![ModelChoice::new(FamilyChoice::Linear)];
                s
            })
            .collect()
    }

    #[test]
    fn streams_are_distinct_and_stable() {
        let a = stream_rng(3, "policy").next_u64();
        assert_eq!(a, stream_rng(3, "policy").next_u64());
        assert_ne!(a, stream_rng(3, "bootstrap").next_u64());
        assert_ne!(a, stream_rng(4, "policy").next_u64());
    }

    #[test]
    fn oracle_is_exact() {
        let config = IeoeConfig::new((0..5).collect());
        let rs = run_algorithm1(&config, &task(), &setups(&["oracle"])).unwrap();
        assert!(rs.squared_errors("oracle").unwrap().iter().all(|&z| z == 0.0));
    }

    #[test]
    fn records_are_reproducible_and_estimator_independent() {
        let mut config = IeoeConfig::new((0..6).collect());
        config.sampler = SamplerMode::TunedEstimatorParams;
        let all = run_algorithm1(&config, &task(), &setups(&["dm", "ipw_ps", "dr_ps", "sndr"])).unwrap();
        let again = run_algorithm1(&config, &task(), &setups(&["dm", "ipw_ps", "dr_ps", "sndr"])).unwrap();
        assert_eq!(all, again);
        let alone = run_algorithm1(&config, &task(), &setups(&["dr_ps"])).unwrap();
        assert_eq!(alone.get("dr_ps"), all.get("dr_ps"));
        for e in &all.estimators {
            assert_eq!(e.records.len(), 6);
            assert!(e.records.iter().all(|r| !r.flagged && r.squared_error >= 0.0));
        }
    }

    #[test]
    fn single_policy_is_always_chosen() {
        let mut t = task();
        t.policies.truncate(1);
        let rs = run_algorithm1(&IeoeConfig::new(vec![1, 2, 3]), &t, &setups(&["snipw"])).unwrap();
        assert!(rs.estimators[0].records.iter().all(|r| r.policy_id == "a"));
    }

    #[test]
    fn algorithm2_needs_two_datasets() {
        let t = task();
        let d = LoggedDataset {
            id: "only".into(),
            feedback: t.feedback,
            policy_on: vec![None],
        };
        assert!(matches!(
            run_algorithm2(&IeoeConfig::new(vec![0]), &[d], &setups(&["snipw"])),
            Err(Error::FewerThanTwoDatasets(1))
        ));
    }

    #[test]
    fn duplicate_seeds_rejected() {
        let r = run_algorithm1(&IeoeConfig::new(vec![1, 1]), &task(), &setups(&["snipw"]));
        assert!(matches!(r, Err(Error::Validation { .. })));
    }
}

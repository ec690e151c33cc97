//! Builds the data for an experiment and runs the matching algorithm.

use std::sync::Arc;

use crate::bandit::LoggedBanditFeedback;
use crate::datagen::{
    build_mixed_policy, classification_ground_truth, classification_to_feedback, generate_synthetic_feedback,
    mixed_policy_distribution, synthetic_classification, true_policy_value, BehaviorGreedyChoice, ConstantChoice,
    DeterministicPolicy, MixedPolicy, OptimalChoice, SyntheticEnvironment,
};
use crate::error::Result;
use crate::evaluator::{
    run_algorithm1, run_algorithm2, BanditTask, EvaluationPolicy, LoggedDataset, PropensityMode, ResultSet,
};

use super::config::{ClassificationSource, DataSource, ExperimentConfig, RealworldSource, SyntheticBase, SyntheticSource};
use super::data::{load_classification_csv, load_feedback_csv, load_policy_csv, FeedbackOptions};

/// Data ready for one of the two algorithms.
#[derive(Debug, Clone)]
pub enum PreparedData {
    Task(BanditTask),
    Datasets(Vec<LoggedDataset>),
}

pub fn synthetic_task(src: &SyntheticSource) -> Result<BanditTask> {
    let env = Arc::new(SyntheticEnvironment::random(
        src.dim_context,
        src.n_actions,
        src.reward_kind,
        src.r_max,
        src.env_seed,
    )?);
    let (feedback, _) = generate_synthetic_feedback(&env, src.n, src.log_seed)?;
    let mut policies = Vec::with_capacity(src.policies.len());
    for p in &src.policies {
        let choice: Option<Arc<dyn DeterministicPolicy>> = match p.base {
            SyntheticBase::Optimal => Some(Arc::new(OptimalChoice(Arc::clone(&env)))),
            SyntheticBase::BehaviorGreedy => Some(Arc::new(BehaviorGreedyChoice(Arc::clone(&env)))),
            SyntheticBase::Constant => Some(Arc::new(ConstantChoice(p.action.unwrap_or(0)))),
            SyntheticBase::Uniform => None,
        };
        let policy = match choice {
            Some(c) => MixedPolicy::new(c, p.alpha, src.n_actions)?,
            None => MixedPolicy::uniform(src.n_actions),
        };
        let dist = mixed_policy_distribution(&policy, feedback.contexts.view())?;
        // One Monte Carlo sample shared by every policy.
        let (value, se) = true_policy_value(&env, &policy, src.n_mc, src.env_seed.wrapping_add(1))?;
        log::info!("policy {}: value {value:.6} (mc se {se:.2e})", p.name);
        policies.push(EvaluationPolicy {
            id: p.name.clone(),
            dist,
            value,
        });
    }
    Ok(BanditTask { feedback, policies })
}

pub fn classification_task(src: &ClassificationSource) -> Result<BanditTask> {
    let ds = match &src.path {
        Some(path) => load_classification_csv(path, src.n_classes)?,
        None => {
            let g = &src.generate;
            synthetic_classification(g.n, g.dim, g.n_classes, g.spread, g.seed)?
        }
    };
    let (train, test) = ds.split(src.train_fraction, src.split_seed)?;
    let behavior = build_mixed_policy(&src.behavior, &train)?;
    let feedback = classification_to_feedback(&test, &behavior, src.log_seed)?;
    let mut policies = Vec::with_capacity(src.policies.len());
    for p in &src.policies {
        let policy = build_mixed_policy(p, &train)?;
        let dist = mixed_policy_distribution(&policy, test.features.view())?;
        let value = classification_ground_truth(&test, &dist)?;
        log::info!("policy {}: value {value:.6}", p.name);
        policies.push(EvaluationPolicy {
            id: p.name.clone(),
            dist,
            value,
        });
    }
    Ok(BanditTask { feedback, policies })
}

pub fn realworld_datasets(src: &RealworldSource, require_propensities: bool) -> Result<Vec<LoggedDataset>> {
    let opts = FeedbackOptions {
        n_actions: src.n_actions,
        r_max: src.r_max,
        require_propensities,
    };
    let raw: Vec<LoggedBanditFeedback> = src
        .datasets
        .iter()
        .map(|d| load_feedback_csv(&d.feedback, opts))
        .collect::<Result<_>>()?;
    let tables = src
        .datasets
        .iter()
        .map(|d| load_policy_csv(&d.policy))
        .collect::<Result<Vec<_>>>()?;
    // Datasets are concatenated, so they must agree on |A| and r_max.
    let n_actions = src.n_actions.unwrap_or_else(|| {
        raw.iter()
            .map(|f| f.n_actions)
            .chain(tables.iter().map(|t| t.n_actions))
            .max()
            .unwrap_or(2)
    });
    let r_max = src
        .r_max
        .unwrap_or_else(|| raw.iter().map(|f| f.r_max).fold(0.0, f64::max));
    let feedback: Vec<LoggedBanditFeedback> = raw
        .into_iter()
        .map(|f| LoggedBanditFeedback::new(f.contexts, f.actions, f.rewards, f.propensities, n_actions, r_max))
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(src.datasets.len());
    for (j, entry) in src.datasets.iter().enumerate() {
        let table = &tables[j];
        if table.n_actions != n_actions {
            return Err(crate::error::Error::Schema {
                path: entry.policy.clone(),
                row: 1,
                column: "p*".into(),
                reason: format!("{} action columns, expected {n_actions}", table.n_actions),
            });
        }
        if let Some(unknown) = table.datasets().find(|id| src.datasets.iter().all(|d| d.id != *id)) {
            return Err(crate::error::Error::Schema {
                path: entry.policy.clone(),
                row: 0,
                column: "key".into(),
                reason: format!("unknown dataset `{unknown}`"),
            });
        }
        let policy_on = src
            .datasets
            .iter()
            .zip(&feedback)
            .map(|(other, fb)| table.distribution(&entry.policy, &other.id, fb.n()))
            .collect::<Result<Vec<_>>>()?;
        out.push(LoggedDataset {
            id: entry.id.clone(),
            feedback: feedback[j].clone(),
            policy_on,
        });
    }
    Ok(out)
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    Ok(match &cfg.data {
        DataSource::Synthetic(s) => PreparedData::Task(synthetic_task(s)?),
        DataSource::Classification(c) => PreparedData::Task(classification_task(c)?),
        DataSource::Realworld(r) => {
            let require = matches!(cfg.ieoe.propensities, PropensityMode::True);
            PreparedData::Datasets(realworld_datasets(r, require)?)
        }
    })
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultSet> {
    match prepare_data(cfg)? {
        PreparedData::Task(task) => run_algorithm1(&cfg.ieoe, &task, &cfg.estimators),
        PreparedData::Datasets(ds) => run_algorithm2(&cfg.ieoe, &ds, &cfg.estimators),
    }
}

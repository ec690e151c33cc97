//! Synthetic bandit environments, multiclass-to-bandit conversion,
//! alpha-mixed policies and ground-truth policy values.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bandit::{ActionDistribution, LoggedBanditFeedback, Policy, RewardPredictionMatrix};
use crate::error::{Error, Result};
use crate::models::{argmax, fit_classifier, FittedPolicyModel, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    Binary,
    Continuous,
}

/// Half-width of the uniform reward noise, as a fraction of `r_max`.
pub const CONTINUOUS_NOISE: f64 = 0.1;

/// A synthetic contextual bandit with linear-logistic (binary) or clipped
/// linear (continuous) mean rewards and a softmax behavior policy.
///
/// Weight matrices are `n_actions x (d + 1)` with the intercept in column 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEnvironment {
    pub dim_context: usize,
    pub n_actions: usize,
    pub reward_kind: RewardKind,
    pub r_max: f64,
    pub reward_weights: Array2<f64>,
    pub behavior_weights: Array2<f64>,
    pub seed: u64,
}

fn linear(weights: &Array2<f64>, a: usize, x: ArrayView1<'_, f64>) -> f64 {
    let w = weights.row(a);
    w[0] + w.iter().skip(1).zip(x.iter()).map(|(a, b)| a * b).sum::<f64>()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Antiderivative of `clip(v, 0, r)`.
fn clip_integral(v: f64, r: f64) -> f64 {
    if v <= 0.0 {
        0.0
    } else if v <= r {
        0.5 * v * v
    } else {
        0.5 * r * r + r * (v - r)
    }
}

fn softmax(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

fn sample_categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, &pa) in p.iter().enumerate() {
        acc += pa;
        if u < acc {
            return a;
        }
    }
    // Rounding left `acc` a hair below 1; take the last action with mass.
    p.iter().rposition(|&pa| pa > 0.0).unwrap_or(p.len() - 1)
}

impl SyntheticEnvironment {
    /// Draws reward and behavior weights from `seed`. Binary environments
    /// use `r_max = 1`.
    pub fn random(dim_context: usize, n_actions: usize, reward_kind: RewardKind, r_max: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols = dim_context + 1;
        let scale = match reward_kind {
            RewardKind::Binary => 1.0 / (dim_context.max(1) as f64).sqrt(),
            RewardKind::Continuous => 0.15 / (dim_context.max(1) as f64).sqrt(),
        };
        let reward_weights = Array2::from_shape_fn((n_actions, cols), |_| {
            scale * rng.sample::<f64, _>(StandardNormal)
        });
        let behavior_weights = Array2::from_shape_fn((n_actions, cols), |_| rng.sample::<f64, _>(StandardNormal));
        let env = Self {
            dim_context,
            n_actions,
            reward_kind,
            r_max: if reward_kind == RewardKind::Binary { 1.0 } else { r_max },
            reward_weights,
            behavior_weights,
            seed,
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_actions == 0 {
            return Err(Error::invalid("n_actions", "must be >= 1"));
        }
        if !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return Err(Error::invalid("r_max", format!("must be positive, got {}", self.r_max)));
        }
        if self.reward_kind == RewardKind::Binary && self.r_max != 1.0 {
            return Err(Error::invalid("r_max", "binary rewards require r_max = 1"));
        }
        for (what, w) in [("reward weights", &self.reward_weights), ("behavior weights", &self.behavior_weights)] {
            if w.dim() != (self.n_actions, self.dim_context + 1) {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: self.n_actions * (self.dim_context + 1),
                    found: w.len(),
                });
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("weights", "must be finite"));
            }
        }
        Ok(())
    }

    /// The mean reward `q(x, a) = E[r | x, a]`. For continuous rewards this is
    /// the exact mean of the clipped noisy reward.
    pub fn q(&self, x: ArrayView1<'_, f64>, a: usize) -> f64 {
        let z = linear(&self.reward_weights, a, x);
        match self.reward_kind {
            RewardKind::Binary => sigmoid(z),
            RewardKind::Continuous => {
                let r = self.r_max;
                let center = self.center(z);
                let h = CONTINUOUS_NOISE * r;
                (clip_integral(center + h, r) - clip_integral(center - h, r)) / (2.0 * h)
            }
        }
    }

    fn center(&self, z: f64) -> f64 {
        (self.r_max * (0.5 + z)).clamp(0.0, self.r_max)
    }

    pub fn behavior_distribution(&self, x: ArrayView1<'_, f64>) -> Vec<f64> {
        let mut z: Vec<f64> = (0..self.n_actions).map(|a| linear(&self.behavior_weights, a, x)).collect();
        softmax(&mut z);
        z
    }

    /// `Some(c)` when `q` does not depend on the context or the action.
    pub fn constant_q(&self) -> Option<f64> {
        let w = &self.reward_weights;
        if w.is_empty() || w.iter().enumerate().any(|(k, v)| k % w.ncols() != 0 && *v != 0.0) {
            return None;
        }
        let b = w[[0, 0]];
        if w.column(0).iter().any(|&v| v != b) {
            return None;
        }
        let x = ndarray::Array1::zeros(self.dim_context);
        Some(self.q(x.view(), 0))
    }

    pub fn true_q_matrix(&self, contexts: ArrayView2<'_, f64>) -> Result<RewardPredictionMatrix> {
        let n = contexts.nrows();
        let mut q = Array2::zeros((n, self.n_actions));
        for (i, x) in contexts.outer_iter().enumerate() {
            for a in 0..self.n_actions {
                q[[i, a]] = self.q(x, a);
            }
        }
        RewardPredictionMatrix::new(q)
    }

    fn draw_contexts<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_fn((n, self.dim_context), |_| rng.sample::<f64, _>(StandardNormal))
    }
}

/// The softmax behavior policy of an environment.
impl Policy for SyntheticEnvironment {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn distribution(&self, context: ArrayView1<'_, f64>) -> Vec<f64> {
        self.behavior_distribution(context)
    }
}

/// Logs `n` rounds of the environment's behavior policy. Returns the feedback
/// (with exact propensities) and the true `q` at the logged contexts.
pub fn generate_synthetic_feedback(
    env: &SyntheticEnvironment,
    n: usize,
    seed: u64,
) -> Result<(LoggedBanditFeedback, RewardPredictionMatrix)> {
    env.validate()?;
    if n == 0 {
        return Err(Error::EmptyFeedback);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let contexts = env.draw_contexts(n, &mut rng);
    let mut actions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    let mut propensities = Vec::with_capacity(n);
    let h = CONTINUOUS_NOISE * env.r_max;
    for x in contexts.outer_iter() {
        let p = env.behavior_distribution(x);
        let a = sample_categorical(&p, &mut rng);
        let r = match env.reward_kind {
            RewardKind::Binary => {
                if rng.random::<f64>() < env.q(x, a) {
                    1.0
                } else {
                    0.0
                }
            }
            RewardKind::Continuous => {
                let c = env.center(linear(&env.reward_weights, a, x));
                (c + rng.random_range(-h..=h)).clamp(0.0, env.r_max)
            }
        };
        actions.push(a);
        rewards.push(r);
        propensities.push(p[a]);
    }
    let q = env.true_q_matrix(contexts.view())?;
    let fb = LoggedBanditFeedback::new(contexts, actions, rewards, Some(propensities), env.n_actions, env.r_max)?;
    Ok((fb, q))
}

/// Monte Carlo estimate of `V(pi) = E_x[sum_a pi(a|x) q(x, a)]` over `n_mc`
/// fresh contexts, with its standard error. Exact when `q` is constant.
pub fn true_policy_value(env: &SyntheticEnvironment, policy: &dyn Policy, n_mc: usize, seed: u64) -> Result<(f64, f64)> {
    if n_mc == 0 {
        return Err(Error::invalid("n_mc", "must be >= 1"));
    }
    if let Some(c) = env.constant_q() {
        return Ok((c, 0.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = ndarray::Array1::<f64>::zeros(env.dim_context);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n_mc {
        x.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let p = policy.distribution(x.view());
        let v: f64 = p.iter().enumerate().map(|(a, pa)| pa * env.q(x.view(), a)).sum();
        sum += v;
        sum_sq += v * v;
    }
    let m = n_mc as f64;
    let mean = sum / m;
    let var = if n_mc > 1 {
        ((sum_sq - m * mean * mean) / (m - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok((mean, (var / m).sqrt()))
}

/// A deterministic action choice `pi_det(x)`.
pub trait DeterministicPolicy: Send + Sync {
    fn choose(&self, context: ArrayView1<'_, f64>) -> usize;
}

impl DeterministicPolicy for FittedPolicyModel {
    fn choose(&self, context: ArrayView1<'_, f64>) -> usize {
        self.argmax(context)
    }
}

/// Always the same action.
#[derive(Debug, Clone, Copy)]
pub struct ConstantChoice(pub usize);

impl DeterministicPolicy for ConstantChoice {
    fn choose(&self, _: ArrayView1<'_, f64>) -> usize {
        self.0
    }
}

/// `argmax_a q(x, a)` of an environment.
#[derive(Debug, Clone)]
pub struct OptimalChoice(pub Arc<SyntheticEnvironment>);

impl DeterministicPolicy for OptimalChoice {
    fn choose(&self, x: ArrayView1<'_, f64>) -> usize {
        let q: Vec<f64> = (0..self.0.n_actions).map(|a| self.0.q(x, a)).collect();
        argmax(&q)
    }
}

/// `argmax_a pi_b(a | x)` of an environment.
#[derive(Debug, Clone)]
pub struct BehaviorGreedyChoice(pub Arc<SyntheticEnvironment>);

impl DeterministicPolicy for BehaviorGreedyChoice {
    fn choose(&self, x: ArrayView1<'_, f64>) -> usize {
        argmax(&self.0.behavior_distribution(x))
    }
}

/// `pi(a|x) = alpha I{pi_det(x) = a} + (1 - alpha) / |A|`.
#[derive(Clone)]
pub struct MixedPolicy {
    pub choice: Arc<dyn DeterministicPolicy>,
    pub alpha: f64,
    pub n_actions: usize,
}

impl fmt::Debug for MixedPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MixedPolicy")
            .field("alpha", &self.alpha)
            .field("n_actions", &self.n_actions)
            .finish_non_exhaustive()
    }
}

impl MixedPolicy {
    pub fn new(choice: Arc<dyn DeterministicPolicy>, alpha: f64, n_actions: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::invalid("alpha", format!("must be in [0, 1], got {alpha}")));
        }
        if n_actions == 0 {
            return Err(Error::invalid("n_actions", "must be >= 1"));
        }
        Ok(Self {
            choice,
            alpha,
            n_actions,
        })
    }

    /// The uniform random policy.
    pub fn uniform(n_actions: usize) -> Self {
        Self {
            choice: Arc::new(ConstantChoice(0)),
            alpha: 0.0,
            n_actions,
        }
    }
}

impl Policy for MixedPolicy {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn distribution(&self, context: ArrayView1<'_, f64>) -> Vec<f64> {
        let k = self.n_actions as f64;
        let base = (1.0 - self.alpha) / k;
        let mut p = vec![base; self.n_actions];
        p[self.choice.choose(context)] = self.alpha + base;
        p
    }
}

/// The mixed policy evaluated at every context row.
pub fn mixed_policy_distribution(policy: &MixedPolicy, contexts: ArrayView2<'_, f64>) -> Result<ActionDistribution> {
    policy.action_distribution(contexts)
}

/// Fully labelled multiclass data `{(x_i, y_i)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationDataset {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl ClassificationDataset {
    pub fn new(features: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let ds = Self {
            features,
            labels,
            n_classes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.features.nrows();
        if self.labels.len() != n {
            return Err(Error::DimensionMismatch {
                what: "labels",
                expected: n,
                found: self.labels.len(),
            });
        }
        if self.n_classes == 0 {
            return Err(Error::invalid("n_classes", "must be >= 1"));
        }
        if n < self.n_classes {
            return Err(Error::invalid(
                "classification dataset",
                format!("{n} rows cannot cover {} classes", self.n_classes),
            ));
        }
        if let Some((i, &y)) = self.labels.iter().enumerate().find(|(_, &y)| y >= self.n_classes) {
            return Err(Error::ActionOutOfRange {
                index: i,
                action: y,
                n_actions: self.n_classes,
            });
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), rows),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// Seeded random split; the first part gets `round(train_fraction * n)` rows.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::invalid(
                "train_fraction",
                format!("must be in (0, 1), got {train_fraction}"),
            ));
        }
        let n = self.n();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let k = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
        let (mut a, mut b) = (idx[..k].to_vec(), idx[k..].to_vec());
        a.sort_unstable();
        b.sort_unstable();
        Ok((self.subset(&a), self.subset(&b)))
    }

    /// Fraction of rows a deterministic policy labels correctly.
    pub fn accuracy(&self, policy: &dyn DeterministicPolicy) -> f64 {
        let hits = self
            .features
            .outer_iter()
            .zip(&self.labels)
            .filter(|(x, &y)| policy.choose(x.view()) == y)
            .count();
        hits as f64 / self.n() as f64
    }
}

/// Logs bandit feedback from labelled data: `a_i ~ behavior(x_i)`,
/// `r_i = I{a_i = y_i}`, with the behavior propensities recorded.
pub fn classification_to_feedback(
    ds: &ClassificationDataset,
    behavior: &MixedPolicy,
    seed: u64,
) -> Result<LoggedBanditFeedback> {
    ds.validate()?;
    if behavior.n_actions != ds.n_classes {
        return Err(Error::DimensionMismatch {
            what: "behavior policy actions",
            expected: ds.n_classes,
            found: behavior.n_actions,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = ds.n();
    let mut actions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    let mut propensities = Vec::with_capacity(n);
    for (x, &y) in ds.features.outer_iter().zip(&ds.labels) {
        let p = behavior.distribution(x);
        let a = sample_categorical(&p, &mut rng);
        actions.push(a);
        rewards.push(if a == y { 1.0 } else { 0.0 });
        propensities.push(p[a]);
    }
    LoggedBanditFeedback::new(ds.features.clone(), actions, rewards, Some(propensities), ds.n_classes, 1.0)
}

/// `V(pi_e; D_te) = mean_i pi_e(y_i | x_i)`.
pub fn classification_ground_truth(ds_test: &ClassificationDataset, eval_dist: &ActionDistribution) -> Result<f64> {
    if eval_dist.n() != ds_test.n() || eval_dist.n_actions() != ds_test.n_classes {
        return Err(Error::DimensionMismatch {
            what: "evaluation distribution vs test set",
            expected: ds_test.n() * ds_test.n_classes,
            found: eval_dist.n() * eval_dist.n_actions(),
        });
    }
    let total: f64 = ds_test.labels.iter().enumerate().map(|(i, &y)| eval_dist.prob(i, y)).sum();
    Ok(total / ds_test.n() as f64)
}

/// Gaussian class clusters: class means drawn from `N(0, spread^2 I)`,
/// uniform labels, unit-variance noise around the mean.
pub fn synthetic_classification(
    n: usize,
    dim: usize,
    n_classes: usize,
    spread: f64,
    seed: u64,
) -> Result<ClassificationDataset> {
    if !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::invalid("spread", format!("must be finite and >= 0, got {spread}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means_dist = Normal::new(0.0, spread).map_err(|e| Error::invalid("spread", e.to_string()))?;
    let means = Array2::from_shape_fn((n_classes.max(1), dim), |_| means_dist.sample(&mut rng));
    let mut labels = Vec::with_capacity(n);
    let mut features = Array2::zeros((n, dim));
    for mut row in features.outer_iter_mut() {
        let y = rng.random_range(0..n_classes.max(1));
        for (j, v) in row.iter_mut().enumerate() {
            *v = means[[y, j]] + rng.sample::<f64, _>(StandardNormal);
        }
        labels.push(y);
    }
    ClassificationDataset::new(features, labels, n_classes)
}

/// One row of a policy table: a base classifier (or none for uniform) and
/// its mixing weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPreset {
    pub name: String,
    /// `None` is the uniform random policy.
    #[serde(default)]
    pub classifier: Option<ModelSpec>,
    pub alpha: f64,
}

fn rf_substitute() -> ModelSpec {
    ModelSpec::Boosting {
        learning_rate: 0.1,
        max_depth: 10,
        min_samples_leaf: 5,
        n_estimators: 100,
    }
}

/// Behavior policy: logistic (C = 100) with alpha 0.9. Evaluation policies:
/// logistic at 0.8 and 0.2, boosted trees at 0.8 and 0.2, uniform.
pub fn default_policy_preset() -> (PolicyPreset, Vec<PolicyPreset>) {
    let lr = ModelSpec::Logistic { c: 100.0 };
    let p = |name: &str, classifier: Option<ModelSpec>, alpha| PolicyPreset {
        name: name.to_string(),
        classifier,
        alpha,
    };
    (
        p("behavior", Some(lr.clone()), 0.9),
        vec![
            p("logistic_0.8", Some(lr.clone()), 0.8),
            p("logistic_0.2", Some(lr), 0.2),
            p("boosting_0.8", Some(rf_substitute()), 0.8),
            p("boosting_0.2", Some(rf_substitute()), 0.2),
            p("uniform", None, 0.0),
        ],
    )
}

/// Default train fraction of the classification split.
pub const TRAIN_FRACTION: f64 = 0.3;

/// Turns a policy preset into a mixed policy, training its classifier on `train`.
pub fn build_mixed_policy(preset: &PolicyPreset, train: &ClassificationDataset) -> Result<MixedPolicy> {
    match &preset.classifier {
        None if preset.alpha == 0.0 => Ok(MixedPolicy::uniform(train.n_classes)),
        None => Err(Error::invalid(
            "alpha",
            format!("policy `{}` has no classifier, so alpha must be 0", preset.name),
        )),
        Some(spec) => {
            let model = fit_classifier(spec, train.features.view(), &train.labels, train.n_classes)?;
            MixedPolicy::new(Arc::new(model), preset.alpha, train.n_classes)
        }
    }
}

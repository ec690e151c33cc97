//! In-house supervised models: reward regression `q_hat`, behavior-policy
//! estimation `pi_hat_b`, K-fold cross-fitting and randomized search over
//! model hyperparameters.
//!
//! Reward models see the context concatenated with a one-hot encoding of the
//! action. Policy models see the context only.

mod boosting;
mod linear;

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{LoggedBanditFeedback, Policy, RewardPredictionMatrix};
use crate::error::{Error, Result};
use crate::estimators::Fold;
use boosting::{fit_booster, BoostParams, Booster, Loss};
use linear::{constant_score, fit_logistic, fit_ridge, fit_softmax, softmax_in_place, LinearScore, SoftmaxModel};

pub use linear::{GRAD_TOL, MAX_ITER};

/// Probability mass left off the only observed action by a degenerate policy model.
pub const DEGENERATE_EPS: f64 = 1e-6;

const DEFAULT_N_ESTIMATORS: usize = 100;

/// Dense row-major design matrix.
#[derive(Debug, Clone)]
pub(crate) struct Design {
    pub n: usize,
    pub p: usize,
    pub data: Vec<f64>,
}

impl Design {
    pub(crate) fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    Logistic,
    Ridge,
    Boosting,
}

impl ModelFamily {
    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Logistic => "logistic",
            ModelFamily::Ridge => "ridge",
            ModelFamily::Boosting => "boosting",
        }
    }

    /// Hyperparameter ranges searched for this family.
    pub fn default_space(self) -> HyperparamSpace {
        let mut space = HyperparamSpace::new();
        match self {
            ModelFamily::Logistic => {
                space.insert("C".into(), ParamRange::log(1e-3, 1e3));
            }
            ModelFamily::Ridge => {
                space.insert("alpha".into(), ParamRange::log(1e-2, 1e2));
            }
            ModelFamily::Boosting => {
                space.insert("learning_rate".into(), ParamRange::log(1e-4, 1e-1));
                space.insert("max_depth".into(), ParamRange::int(2.0, 10.0));
                space.insert("min_samples_leaf".into(), ParamRange::int(5.0, 20.0));
            }
        }
        space
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A model family together with concrete hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Logistic {
        #[serde(rename = "C", alias = "c")]
        c: f64,
    },
    Ridge {
        alpha: f64,
    },
    Boosting {
        learning_rate: f64,
        max_depth: usize,
        min_samples_leaf: usize,
        #[serde(default = "default_n_estimators")]
        n_estimators: usize,
    },
}

fn default_n_estimators() -> usize {
    DEFAULT_N_ESTIMATORS
}

impl ModelSpec {
    pub fn family(&self) -> ModelFamily {
        match self {
            ModelSpec::Logistic { .. } => ModelFamily::Logistic,
            ModelSpec::Ridge { .. } => ModelFamily::Ridge,
            ModelSpec::Boosting { .. } => ModelFamily::Boosting,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be positive and finite, got {v}")))
            }
        };
        match *self {
            ModelSpec::Logistic { c } => positive("C", c),
            ModelSpec::Ridge { alpha } => positive("alpha", alpha),
            ModelSpec::Boosting {
                learning_rate,
                max_depth,
                min_samples_leaf,
                n_estimators,
            } => {
                positive("learning_rate", learning_rate)?;
                if max_depth == 0 {
                    return Err(Error::invalid("max_depth", "must be >= 1"));
                }
                if min_samples_leaf == 0 {
                    return Err(Error::invalid("min_samples_leaf", "must be >= 1"));
                }
                if n_estimators == 0 {
                    return Err(Error::invalid("n_estimators", "must be >= 1"));
                }
                Ok(())
            }
        }
    }

    /// Builds a spec from named values. Names the family does not know are
    /// rejected; missing names take family defaults.
    pub fn from_params(family: ModelFamily, params: &BTreeMap<String, f64>) -> Result<Self> {
        let get = |name: &str, default: f64| params.get(name).copied().unwrap_or(default);
        let allowed: &[&str] = match family {
            ModelFamily::Logistic => &["C"],
            ModelFamily::Ridge => &["alpha"],
            ModelFamily::Boosting => &["learning_rate", "max_depth", "min_samples_leaf", "n_estimators"],
        };
        if let Some(bad) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::invalid(
                "hyperparameter",
                format!("`{bad}` is not a {family} hyperparameter"),
            ));
        }
        let spec = match family {
            ModelFamily::Logistic => ModelSpec::Logistic { c: get("C", 1.0) },
            ModelFamily::Ridge => ModelSpec::Ridge { alpha: get("alpha", 1.0) },
            ModelFamily::Boosting => ModelSpec::Boosting {
                learning_rate: get("learning_rate", 0.1),
                max_depth: get("max_depth", 3.0).round() as usize,
                min_samples_leaf: get("min_samples_leaf", 20.0).round() as usize,
                n_estimators: get("n_estimators", DEFAULT_N_ESTIMATORS as f64).round() as usize,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Logistic { c } => write!(f, "logistic(C={c})"),
            ModelSpec::Ridge { alpha } => write!(f, "ridge(alpha={alpha})"),
            ModelSpec::Boosting {
                learning_rate,
                max_depth,
                min_samples_leaf,
                n_estimators,
            } => write!(
                f,
                "boosting(learning_rate={learning_rate},max_depth={max_depth},min_samples_leaf={min_samples_leaf},n_estimators={n_estimators})"
            ),
        }
    }
}

/// Range of one model hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamRange {
    Set {
        values: Vec<f64>,
    },
    Interval {
        lower: f64,
        upper: f64,
        #[serde(default)]
        log_scale: bool,
        #[serde(default)]
        integer: bool,
    },
}

impl ParamRange {
    pub fn log(lower: f64, upper: f64) -> Self {
        ParamRange::Interval {
            lower,
            upper,
            log_scale: true,
            integer: false,
        }
    }

    pub fn int(lower: f64, upper: f64) -> Self {
        ParamRange::Interval {
            lower,
            upper,
            log_scale: false,
            integer: true,
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let bad = |reason: String| Err(Error::validation(format!("model_space.{name}"), reason));
        match self {
            ParamRange::Set { values } => {
                if values.is_empty() {
                    return bad("value set is empty".into());
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return bad("values must be finite".into());
                }
            }
            &ParamRange::Interval {
                lower,
                upper,
                log_scale,
                integer,
            } => {
                if !(lower.is_finite() && upper.is_finite()) || lower > upper {
                    return bad(format!("need finite lower <= upper, got [{lower}, {upper}]"));
                }
                if log_scale && lower <= 0.0 {
                    return bad("log_scale requires lower > 0".into());
                }
                if integer && lower.ceil() > upper.floor() {
                    return bad("interval contains no integer".into());
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ParamRange::Set { values } => values[rng.random_range(0..values.len())],
            &ParamRange::Interval {
                lower,
                upper,
                log_scale,
                integer,
            } => {
                if integer {
                    let (lo, hi) = (lower.ceil() as i64, upper.floor() as i64);
                    rng.random_range(lo..=hi) as f64
                } else if lower == upper {
                    lower
                } else if log_scale {
                    rng.random_range(lower.ln()..upper.ln()).exp()
                } else {
                    rng.random_range(lower..upper)
                }
            }
        }
    }
}

/// Named hyperparameter ranges for one model family.
pub type HyperparamSpace = BTreeMap<String, ParamRange>;

/// Draws one value per named range (in name order).
pub fn sample_spec<R: Rng + ?Sized>(family: ModelFamily, space: &HyperparamSpace, rng: &mut R) -> Result<ModelSpec> {
    let params: BTreeMap<String, f64> = space.iter().map(|(k, r)| (k.clone(), r.sample(rng))).collect();
    ModelSpec::from_params(family, &params)
}

#[derive(Debug, Clone, PartialEq)]
enum RewardInner {
    Ridge(LinearScore),
    Logistic(LinearScore),
    Boosting(Booster),
}

/// A fitted estimate of `q(x, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedRewardModel {
    inner: RewardInner,
    dim_context: usize,
    n_actions: usize,
    /// Targets were divided by this before fitting bounded-output families.
    scale: f64,
}

impl FittedRewardModel {
    pub fn dim_context(&self) -> usize {
        self.dim_context
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn predict_features(&self, feats: &[f64]) -> f64 {
        match &self.inner {
            RewardInner::Ridge(m) => m.score(feats),
            RewardInner::Logistic(m) => self.scale * linear::sigmoid(m.score(feats)),
            RewardInner::Boosting(b) => self.scale * b.predict(feats),
        }
    }

    /// `q_hat(x, a)`.
    pub fn predict(&self, context: ArrayView1<'_, f64>, action: usize) -> f64 {
        let mut feats = vec![0.0; self.dim_context + self.n_actions];
        fill_features(&mut feats, context, action);
        self.predict_features(&feats)
    }
}

fn fill_features(out: &mut [f64], context: ArrayView1<'_, f64>, action: usize) {
    let d = context.len();
    for (o, v) in out[..d].iter_mut().zip(context.iter()) {
        *o = *v;
    }
    out[d..].fill(0.0);
    out[d + action] = 1.0;
}

fn reward_design(fb: &LoggedBanditFeedback, rows: &[usize]) -> Design {
    let p = fb.dim_context() + fb.n_actions;
    let mut data = vec![0.0; rows.len() * p];
    for (chunk, &i) in data.chunks_mut(p).zip(rows) {
        fill_features(chunk, fb.context(i), fb.actions[i]);
    }
    Design { n: rows.len(), p, data }
}

fn context_design(fb: &LoggedBanditFeedback, rows: &[usize]) -> Design {
    let p = fb.dim_context();
    let mut data = Vec::with_capacity(rows.len() * p);
    for &i in rows {
        data.extend(fb.context(i).iter());
    }
    Design { n: rows.len(), p, data }
}

fn boost_params(spec: &ModelSpec) -> Option<BoostParams> {
    match *spec {
        ModelSpec::Boosting {
            learning_rate,
            max_depth,
            min_samples_leaf,
            n_estimators,
        } => Some(BoostParams {
            learning_rate,
            max_depth,
            min_samples_leaf,
            n_estimators,
        }),
        _ => None,
    }
}

/// Fits `q_hat` on the given rows with target `r_i` and features `(x_i, onehot(a_i))`.
///
/// Logistic models are fit on `r / r_max` and rescaled, so they also accept
/// non-binary rewards. A ridge system that cannot be factorized falls back to
/// the mean reward with a warning.
pub fn fit_reward_model(spec: &ModelSpec, fb: &LoggedBanditFeedback, rows: &[usize]) -> Result<FittedRewardModel> {
    spec.validate()?;
    if rows.is_empty() {
        return Err(Error::EmptySubset);
    }
    let x = reward_design(fb, rows);
    let y: Vec<f64> = rows.iter().map(|&i| fb.rewards[i]).collect();
    let (inner, scale) = match spec {
        &ModelSpec::Ridge { alpha } => {
            let m = match fit_ridge(&x, &y, alpha) {
                Ok(m) => m,
                Err(e) => {
                    log::warn!("{e}; falling back to the mean reward");
                    constant_score(x.p, y.iter().sum::<f64>() / y.len() as f64)
                }
            };
            (RewardInner::Ridge(m), 1.0)
        }
        &ModelSpec::Logistic { c } => {
            let t: Vec<f64> = y.iter().map(|r| r / fb.r_max).collect();
            (RewardInner::Logistic(fit_logistic(&x, &t, c)?), fb.r_max)
        }
        ModelSpec::Boosting { .. } => {
            let params = boost_params(spec).expect("boosting spec");
            if fb.has_binary_rewards() {
                let t: Vec<f64> = y.iter().map(|r| r / fb.r_max).collect();
                (RewardInner::Boosting(fit_booster(&x, &t, Loss::Logistic, params)), fb.r_max)
            } else {
                (RewardInner::Boosting(fit_booster(&x, &y, Loss::Squared, params)), 1.0)
            }
        }
    };
    Ok(FittedRewardModel {
        inner,
        dim_context: fb.dim_context(),
        n_actions: fb.n_actions,
        scale,
    })
}

/// Predictions `q_hat(x_i, a)` for every row in `rows` and every action.
pub fn predict_reward_matrix(
    model: &FittedRewardModel,
    fb: &LoggedBanditFeedback,
    rows: &[usize],
) -> Result<RewardPredictionMatrix> {
    if model.dim_context != fb.dim_context() {
        return Err(Error::DimensionMismatch {
            what: "reward model context dimension",
            expected: model.dim_context,
            found: fb.dim_context(),
        });
    }
    if model.n_actions != fb.n_actions {
        return Err(Error::DimensionMismatch {
            what: "reward model actions",
            expected: model.n_actions,
            found: fb.n_actions,
        });
    }
    let k = fb.n_actions;
    let mut values = Array2::zeros((rows.len(), k));
    let mut feats = vec![0.0; fb.dim_context() + k];
    for (r, &i) in rows.iter().enumerate() {
        for a in 0..k {
            fill_features(&mut feats, fb.context(i), a);
            values[[r, a]] = model.predict_features(&feats);
        }
    }
    RewardPredictionMatrix::new(values)
}

/// Seeded shuffle of `0..n` cut into `k` equal folds of `n / k` rows. Each
/// fold's indices are sorted; the `n mod k` leftover rows belong to no fold.
pub fn fold_partition(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 {
        return Err(Error::invalid("k_folds", "must be >= 1"));
    }
    if k > n {
        return Err(Error::TooManyFolds { k, n });
    }
    if k == 1 {
        return Ok(vec![(0..n).collect()]);
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let size = n / k;
    Ok(idx
        .chunks(size)
        .take(k)
        .map(|c| {
            let mut f = c.to_vec();
            f.sort_unstable();
            f
        })
        .collect())
}

/// Cross-fitted reward predictions: fold `k`'s matrix comes from a model fit
/// on every row outside fold `k`. With `k = 1` one model is fit and evaluated
/// on all rows.
pub fn cross_fit_reward_matrices(spec: &ModelSpec, fb: &LoggedBanditFeedback, k: usize, seed: u64) -> Result<Vec<Fold>> {
    let n = fb.n();
    let parts = fold_partition(n, k, seed)?;
    if k == 1 {
        let rows = &parts[0];
        let model = fit_reward_model(spec, fb, rows)?;
        return Ok(vec![Fold {
            indices: rows.clone(),
            predictions: predict_reward_matrix(&model, fb, rows)?,
        }]);
    }
    let mut out = Vec::with_capacity(k);
    let mut in_fold = vec![false; n];
    for fold in &parts {
        in_fold.fill(false);
        fold.iter().for_each(|&i| in_fold[i] = true);
        let train: Vec<usize> = (0..n).filter(|&i| !in_fold[i]).collect();
        let model = fit_reward_model(spec, fb, &train)?;
        out.push(Fold {
            indices: fold.clone(),
            predictions: predict_reward_matrix(&model, fb, fold)?,
        });
    }
    Ok(out)
}

/// Post-hoc calibration of an estimated behavior policy.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Calibration {
    #[default]
    None,
    /// One temperature fit by likelihood on a seeded holdout of this fraction.
    TemperatureScaling { holdout_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq)]
enum PolicyInner {
    Softmax(SoftmaxModel),
    OneVsRest(Vec<Booster>),
    Degenerate(usize),
}

/// An estimated behavior policy `pi_hat_b(. | x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedPolicyModel {
    inner: PolicyInner,
    n_actions: usize,
    temperature: f64,
}

impl FittedPolicyModel {
    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self.inner, PolicyInner::Degenerate(_))
    }

    fn logits(&self, row: &[f64]) -> Vec<f64> {
        match &self.inner {
            PolicyInner::Softmax(m) => m.logits(row),
            PolicyInner::OneVsRest(bs) => bs.iter().map(|b| b.raw(row)).collect(),
            PolicyInner::Degenerate(_) => unreachable!("degenerate models have no logits"),
        }
    }

    fn dist_from_row(&self, row: &[f64]) -> Vec<f64> {
        if let PolicyInner::Degenerate(a) = self.inner {
            let k = self.n_actions;
            if k == 1 {
                return vec![1.0];
            }
            let mut p = vec![DEGENERATE_EPS / (k - 1) as f64; k];
            p[a] = 1.0 - DEGENERATE_EPS;
            return p;
        }
        let mut z = self.logits(row);
        z.iter_mut().for_each(|v| *v /= self.temperature);
        softmax_in_place(&mut z);
        z
    }

    /// Most probable action; ties go to the smallest index.
    pub fn argmax(&self, context: ArrayView1<'_, f64>) -> usize {
        argmax(&self.distribution(context))
    }
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (a, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = a;
        }
    }
    best
}

impl Policy for FittedPolicyModel {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn distribution(&self, context: ArrayView1<'_, f64>) -> Vec<f64> {
        let row: Vec<f64> = context.iter().copied().collect();
        self.dist_from_row(&row)
    }
}

/// Fits a multiclass classifier of `labels` given feature rows. Logistic uses
/// a softmax model; boosting uses one-vs-rest with the class log-odds passed
/// through a softmax. A single observed class gives a degenerate model.
pub fn fit_classifier(
    spec: &ModelSpec,
    features: ArrayView2<'_, f64>,
    labels: &[usize],
    n_classes: usize,
) -> Result<FittedPolicyModel> {
    if labels.len() != features.nrows() {
        return Err(Error::DimensionMismatch {
            what: "classifier labels",
            expected: features.nrows(),
            found: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&a| a >= n_classes) {
        return Err(Error::invalid("labels", format!("label {bad} out of range for {n_classes} classes")));
    }
    let x = Design {
        n: features.nrows(),
        p: features.ncols(),
        data: features.iter().copied().collect(),
    };
    fit_policy_classifier(spec, &x, labels, n_classes)
}

pub(crate) fn fit_policy_classifier(
    spec: &ModelSpec,
    contexts: &Design,
    labels: &[usize],
    n_actions: usize,
) -> Result<FittedPolicyModel> {
    spec.validate()?;
    if contexts.n == 0 {
        return Err(Error::EmptySubset);
    }
    let first = labels[0];
    if labels.iter().all(|&a| a == first) {
        log::warn!("only action {first} observed; fitting a degenerate policy model");
        return Ok(FittedPolicyModel {
            inner: PolicyInner::Degenerate(first),
            n_actions,
            temperature: 1.0,
        });
    }
    let inner = match spec {
        ModelSpec::Ridge { .. } => {
            return Err(Error::UnsupportedFamily {
                family: "ridge",
                purpose: "behavior-policy estimation",
            })
        }
        &ModelSpec::Logistic { c } => PolicyInner::Softmax(fit_softmax(contexts, labels, n_actions, c)?),
        ModelSpec::Boosting { .. } => {
            let params = boost_params(spec).expect("boosting spec");
            let boosters = (0..n_actions)
                .map(|k| {
                    let t: Vec<f64> = labels.iter().map(|&a| if a == k { 1.0 } else { 0.0 }).collect();
                    fit_booster(contexts, &t, Loss::Logistic, params)
                })
                .collect();
            PolicyInner::OneVsRest(boosters)
        }
    };
    Ok(FittedPolicyModel {
        inner,
        n_actions,
        temperature: 1.0,
    })
}

const LOG_T_RANGE: (f64, f64) = (-3.0, 3.0);

fn holdout_nll(logits: &[Vec<f64>], labels: &[usize], t: f64) -> f64 {
    let mut total = 0.0;
    for (z, &y) in logits.iter().zip(labels) {
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max) / t;
        let lse = m + z.iter().map(|v| (v / t - m).exp()).sum::<f64>().ln();
        total += lse - z[y] / t;
    }
    total / labels.len() as f64
}

/// Golden-section search over `log T`.
fn fit_temperature(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    let f = |u: f64| holdout_nll(logits, labels, u.exp());
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = LOG_T_RANGE;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-6 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    ((a + b) / 2.0).exp()
}

/// Estimates `pi_b` from logged (context, action) pairs.
pub fn fit_behavior_policy(
    spec: &ModelSpec,
    fb: &LoggedBanditFeedback,
    calibration: Calibration,
    seed: u64,
) -> Result<FittedPolicyModel> {
    let n = fb.n();
    if n < 2 * fb.n_actions {
        log::warn!(
            "behavior-policy fit on {n} rows for {} actions; estimates may be poor",
            fb.n_actions
        );
    }
    let all: Vec<usize> = (0..n).collect();
    let holdout_fraction = match calibration {
        Calibration::None => None,
        Calibration::TemperatureScaling { holdout_fraction } => {
            if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
                return Err(Error::invalid(
                    "holdout_fraction",
                    format!("must be in (0, 1), got {holdout_fraction}"),
                ));
            }
            Some(holdout_fraction)
        }
    };
    let Some(h) = holdout_fraction else {
        return fit_policy_classifier(spec, &context_design(fb, &all), &fb.actions, fb.n_actions);
    };
    let mut idx = all.clone();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_hold = ((h * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let (hold, train) = idx.split_at(n_hold);
    let train_labels: Vec<usize> = train.iter().map(|&i| fb.actions[i]).collect();
    let distinct = train_labels.iter().any(|&a| a != train_labels[0]);
    if train.is_empty() || !distinct {
        return fit_policy_classifier(spec, &context_design(fb, &all), &fb.actions, fb.n_actions);
    }
    let mut model = fit_policy_classifier(spec, &context_design(fb, train), &train_labels, fb.n_actions)?;
    let hx = context_design(fb, hold);
    let logits: Vec<Vec<f64>> = (0..hx.n).map(|i| model.logits(hx.row(i))).collect();
    let labels: Vec<usize> = hold.iter().map(|&i| fb.actions[i]).collect();
    model.temperature = fit_temperature(&logits, &labels);
    Ok(model)
}

/// What a randomized search is tuning for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchTarget {
    /// Squared loss of `q_hat(x_i, a_i)` against `r_i`.
    Reward,
    /// Log loss of `pi_hat_b(a_i | x_i)`.
    BehaviorPolicy,
}

fn cv_loss(spec: &ModelSpec, fb: &LoggedBanditFeedback, halves: &[Vec<usize>; 2], target: SearchTarget) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (train, test) in [(&halves[0], &halves[1]), (&halves[1], &halves[0])] {
        match target {
            SearchTarget::Reward => {
                let m = fit_reward_model(spec, fb, train)?;
                for &i in test.iter() {
                    let e = m.predict(fb.context(i), fb.actions[i]) - fb.rewards[i];
                    total += e * e;
                }
            }
            SearchTarget::BehaviorPolicy => {
                let labels: Vec<usize> = train.iter().map(|&i| fb.actions[i]).collect();
                let m = fit_policy_classifier(spec, &context_design(fb, train), &labels, fb.n_actions)?;
                for &i in test.iter() {
                    let p = m.distribution(fb.context(i))[fb.actions[i]];
                    total -= p.max(1e-15).ln();
                }
            }
        }
        count += test.len();
    }
    Ok(total / count as f64)
}

/// Samples `n_iter` specs from `space` and returns the one with the lowest
/// 2-fold cross-validated loss. The first sample wins ties.
pub fn random_search(
    space: &HyperparamSpace,
    family: ModelFamily,
    fb: &LoggedBanditFeedback,
    n_iter: usize,
    seed: u64,
    target: SearchTarget,
) -> Result<ModelSpec> {
    if space.is_empty() {
        return Err(Error::EmptySpace);
    }
    if n_iter == 0 {
        return Err(Error::invalid("n_iter", "must be >= 1"));
    }
    for (name, range) in space {
        range.validate(name)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = (0..n_iter)
        .map(|_| sample_spec(family, space, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    if specs.len() == 1 {
        return Ok(specs.into_iter().next().expect("one spec"));
    }
    let n = fb.n();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, found: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let (a, b) = idx.split_at(n / 2);
    let halves = [a.to_vec(), b.to_vec()];
    let mut best: Option<(f64, usize)> = None;
    for (j, spec) in specs.iter().enumerate() {
        let loss = cv_loss(spec, fb, &halves, target)?;
        if best.map_or(true, |(l, _)| loss < l) {
            best = Some((loss, j));
        }
    }
    Ok(specs[best.expect("nonempty").1].clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn fb(contexts: Array2<f64>, actions: Vec<usize>, rewards: Vec<f64>, k: usize) -> LoggedBanditFeedback {
        LoggedBanditFeedback::new(contexts, actions, rewards, None, k, 1.0).unwrap()
    }

    #[test]
    fn ridge_constant_target_predicts_constant() {
        let d = fb(array![[0.0], [1.0], [2.0], [5.0]], vec![0, 1, 0, 1], vec![0.3; 4], 2);
        let m = fit_reward_model(&ModelSpec::Ridge { alpha: 3.0 }, &d, &[0, 1, 2, 3]).unwrap();
        for x in [-4.0, 0.5, 10.0] {
            for a in 0..2 {
                assert!((m.predict(array![x].view(), a) - 0.3).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ridge_two_point_prediction() {
        let d = fb(array![[0.0], [1.0]], vec![0, 0], vec![0.0, 1.0], 1);
        let m = fit_reward_model(&ModelSpec::Ridge { alpha: 1.0 }, &d, &[0, 1]).unwrap();
        let q = predict_reward_matrix(&m, &d, &[0, 1]).unwrap();
        assert_eq!(q.n_actions(), 1);
        // beta = 1/3, intercept = 0.5 - beta * 0.5.
        assert!((m.predict(array![0.5].view(), 0) - 0.5).abs() < 1e-9);
        assert!((q.get(0, 0) - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn logistic_separable_rewards() {
        let d = fb(
            array![[-2.0], [-1.0], [-0.5], [0.5], [1.0], [2.0]],
            vec![0; 6],
            vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0],
            2,
        );
        let m = fit_reward_model(&ModelSpec::Logistic { c: 100.0 }, &d, &[0, 1, 2, 3, 4, 5]).unwrap();
        for i in 3..6 {
            let p = m.predict(d.context(i), 0);
            assert!(p > 0.5 && p <= 1.0);
        }
    }

    #[test]
    fn cross_fit_folds_are_equal_and_sorted() {
        let n = 11;
        let ctx = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let d = fb(ctx, vec![0; n], vec![0.5; n], 1);
        let folds = cross_fit_reward_matrices(&ModelSpec::Ridge { alpha: 1.0 }, &d, 3, 7).unwrap();
        assert_eq!(folds.len(), 3);
        for f in &folds {
            assert_eq!(f.indices.len(), 3);
            assert!(f.indices.windows(2).all(|w| w[0] < w[1]));
        }
        let again = cross_fit_reward_matrices(&ModelSpec::Ridge { alpha: 1.0 }, &d, 3, 7).unwrap();
        for (a, b) in folds.iter().zip(&again) {
            assert_eq!(a.indices, b.indices);
        }
        assert!(matches!(
            cross_fit_reward_matrices(&ModelSpec::Ridge { alpha: 1.0 }, &d, 12, 7),
            Err(Error::TooManyFolds { k: 12, n: 11 })
        ));
    }

    #[test]
    fn single_action_gives_degenerate_policy() {
        let d = fb(array![[0.0], [1.0], [2.0]], vec![2, 2, 2], vec![0.0; 3], 3);
        let m = fit_behavior_policy(&ModelSpec::Logistic { c: 1.0 }, &d, Calibration::None, 0).unwrap();
        assert!(m.is_degenerate());
        let p = m.distribution(array![9.0].view());
        assert!(p[2] >= 1.0 - 1e-6);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ridge_cannot_estimate_a_policy() {
        let d = fb(array![[0.0], [1.0]], vec![0, 1], vec![0.0; 2], 2);
        assert!(matches!(
            fit_behavior_policy(&ModelSpec::Ridge { alpha: 1.0 }, &d, Calibration::None, 0),
            Err(Error::UnsupportedFamily { .. })
        ));
    }

    #[test]
    fn one_point_space_is_returned() {
        let d = fb(array![[0.0], [1.0], [2.0], [3.0]], vec![0; 4], vec![0.1, 0.2, 0.3, 0.4], 1);
        let mut space = HyperparamSpace::new();
        space.insert("alpha".into(), ParamRange::Set { values: vec![2.5] });
        for seed in 0..3 {
            let s = random_search(&space, ModelFamily::Ridge, &d, 4, seed, SearchTarget::Reward).unwrap();
            assert_eq!(s, ModelSpec::Ridge { alpha: 2.5 });
        }
        assert!(matches!(
            random_search(&HyperparamSpace::new(), ModelFamily::Ridge, &d, 1, 0, SearchTarget::Reward),
            Err(Error::EmptySpace)
        ));
    }

    #[test]
    fn spec_display_and_serde() {
        let s: ModelSpec = toml::from_str("family = \"logistic\"\nC = 100.0").unwrap();
        assert_eq!(s, ModelSpec::Logistic { c: 100.0 });
        assert_eq!(s.to_string(), "logistic(C=100)");
        let b: ModelSpec =
            toml::from_str("family = \"boosting\"\nlearning_rate = 0.1\nmax_depth = 3\nmin_samples_leaf = 5").unwrap();
        assert!(matches!(b, ModelSpec::Boosting { n_estimators: 100, .. }));
    }
}

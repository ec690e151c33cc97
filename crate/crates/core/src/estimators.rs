//! Policy-value estimators.
//!
//! All estimators share one shape: a direct-method term `E_{a~pi_e}[q_hat]`
//! plus a (possibly shrunk) importance-weighted correction. The functions
//! below are pure; a `lambda`/`tau` of `f64::INFINITY` is an exact limit,
//! not a large float, so `IPWps(inf)` *is* IPW and `DRps(inf)` *is* DR.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bandit::{ActionDistribution, ImportanceWeights, LoggedBanditFeedback, RewardPredictionMatrix};
use crate::error::{Error, Result};
use crate::models::ModelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EstimatorKind {
    Dm,
    Ipw,
    IpwPs,
    Snipw,
    Dr,
    DrPs,
    Sndr,
    SwitchDr,
    DrOs,
}

/// Which shrinkage knob an estimator exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShrinkageParam {
    Lambda,
    Tau,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 9] = [
        EstimatorKind::Dm,
        EstimatorKind::Ipw,
        EstimatorKind::IpwPs,
        EstimatorKind::Snipw,
        EstimatorKind::Dr,
        EstimatorKind::DrPs,
        EstimatorKind::Sndr,
        EstimatorKind::SwitchDr,
        EstimatorKind::DrOs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Dm => "dm",
            EstimatorKind::Ipw => "ipw",
            EstimatorKind::IpwPs => "ipw_ps",
            EstimatorKind::Snipw => "snipw",
            EstimatorKind::Dr => "dr",
            EstimatorKind::DrPs => "dr_ps",
            EstimatorKind::Sndr => "sndr",
            EstimatorKind::SwitchDr => "switch_dr",
            EstimatorKind::DrOs => "dr_os",
        }
    }

    /// Whether the estimator needs a reward model `q_hat`.
    pub fn uses_reward_model(self) -> bool {
        !matches!(self, EstimatorKind::Ipw | EstimatorKind::IpwPs | EstimatorKind::Snipw)
    }

    /// Whether the estimator needs importance weights.
    pub fn uses_weights(self) -> bool {
        self != EstimatorKind::Dm
    }

    pub fn shrinkage_param(self) -> Option<ShrinkageParam> {
        match self {
            EstimatorKind::IpwPs | EstimatorKind::DrPs | EstimatorKind::DrOs => {
                Some(ShrinkageParam::Lambda)
            }
            EstimatorKind::SwitchDr => Some(ShrinkageParam::Tau),
            _ => None,
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        Ok(match key.as_str() {
            "dm" => EstimatorKind::Dm,
            "ipw" | "ips" => EstimatorKind::Ipw,
            "ipwps" => EstimatorKind::IpwPs,
            "snipw" => EstimatorKind::Snipw,
            "dr" => EstimatorKind::Dr,
            "drps" => EstimatorKind::DrPs,
            "sndr" => EstimatorKind::Sndr,
            "switchdr" => EstimatorKind::SwitchDr,
            "dros" => EstimatorKind::DrOs,
            _ => return Err(Error::UnknownEstimator(s.to_string())),
        })
    }
}

impl TryFrom<String> for EstimatorKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EstimatorKind> for String {
    fn from(k: EstimatorKind) -> String {
        k.name().to_string()
    }
}

/// The tunable knobs of an estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorHyperparams {
    /// Clipping / shrinkage level; `INFINITY` disables clipping.
    pub lambda: f64,
    /// Switching threshold; `INFINITY` never switches to the model.
    pub tau: f64,
    pub k_folds: usize,
    pub reward_model: Option<ModelSpec>,
}

impl Default for EstimatorHyperparams {
    fn default() -> Self {
        Self {
            lambda: f64::INFINITY,
            tau: f64::INFINITY,
            k_folds: 1,
            reward_model: None,
        }
    }
}

impl EstimatorHyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::invalid("lambda", format!("must be >= 0, got {}", self.lambda)));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::invalid("tau", format!("must be >= 0, got {}", self.tau)));
        }
        if self.k_folds == 0 {
            return Err(Error::invalid("k_folds", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyValueEstimate {
    pub value: f64,
}

impl PolicyValueEstimate {
    fn checked(value: f64) -> Result<Self> {
        if value.is_finite() {
            Ok(Self { value })
        } else {
            Err(Error::invalid("estimate", format!("non-finite policy value {value}")))
        }
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let mut n = 0usize;
    let mut s = 0.0;
    for x in xs {
        s += x;
        n += 1;
    }
    s / n as f64
}

fn check_weights(fb: &LoggedBanditFeedback, weights: &ImportanceWeights) -> Result<()> {
    if weights.len() != fb.n() {
        return Err(Error::DimensionMismatch {
            what: "importance weights",
            expected: fb.n(),
            found: weights.len(),
        });
    }
    Ok(())
}

fn check_model_inputs(
    fb: &LoggedBanditFeedback,
    eval_dist: &ActionDistribution,
    q_hat: &RewardPredictionMatrix,
) -> Result<()> {
    eval_dist.check_shape(fb)?;
    q_hat.check_shape(fb)
}

/// `E_n[ sum_a pi_e(a|x_i) q_hat(x_i, a) ]`.
pub fn estimate_dm(
    eval_dist: &ActionDistribution,
    q_hat: &RewardPredictionMatrix,
) -> Result<PolicyValueEstimate> {
    if eval_dist.n() != q_hat.n() || eval_dist.n_actions() != q_hat.n_actions() {
        return Err(Error::DimensionMismatch {
            what: "reward predictions vs evaluation distribution",
            expected: eval_dist.n() * eval_dist.n_actions(),
            found: q_hat.n() * q_hat.n_actions(),
        });
    }
    if q_hat.n() == 0 {
        return Err(Error::EmptyInput);
    }
    PolicyValueEstimate::checked(mean(q_hat.expected_under(eval_dist).into_iter()))
}

/// Importance weighting with shrunk weights: `E_n[w_i r_i]`.
fn weighted_reward_mean(fb: &LoggedBanditFeedback, shrunk: &[f64]) -> f64 {
    mean(shrunk.iter().zip(&fb.rewards).map(|(w, r)| w * r))
}

/// `E_n[ dm_i + w_i (r_i - q_hat(x_i, a_i)) ]`.
fn doubly_robust_mean(
    fb: &LoggedBanditFeedback,
    eval_dist: &ActionDistribution,
    q_hat: &RewardPredictionMatrix,
    shrunk: &[f64],
) -> f64 {
    mean(per_sample_terms(fb, eval_dist, Some(q_hat), shrunk).into_iter())
}

/// Per-sample contributions `dm_i + w_i (r_i - q_hat(x_i, a_i))`; without a
/// reward model this is `w_i r_i`.
pub fn per_sample_terms(
    fb: &LoggedBanditFeedback,
    eval_dist: &ActionDistribution,
    q_hat: Option<&RewardPredictionMatrix>,
    shrunk: &[f64],
) -> Vec<f64> {
    match q_hat {
        Some(q) => {
            let dm = q.expected_under(eval_dist);
            let q_logged = q.at_logged(fb);
            dm.iter()
                .zip(shrunk)
                .zip(fb.rewards.iter().zip(&q_logged))
                .map(|((d, w), (r, q))| d + w * (r - q))
                .collect()
        }
        None => shrunk.iter().zip(&fb.rewards).map(|(w, r)| w * r).collect(),
    }
}

pub fn estimate_ipw_ps(
    fb: &LoggedBanditFeedback,
    weights: &ImportanceWeights,
    lambda: f64,
) -> Result<PolicyValueEstimate> {
    check_weights(fb, weights)?;
    let shrunk: Vec<f64> = weights.weights.iter().map(|&w| clip(w, lambda)).collect();
    PolicyValueEstimate::checked(weighted_reward_mean(fb, &shrunk))
}

pub fn estimate_snipw(
    fb: &LoggedBanditFeedback,
    weights: &ImportanceWeights,
) -> Result<PolicyValueEstimate> {
    check_weights(fb, weights)?;
    let w_mean = weights.mean();
    if !(w_mean > 0.0) {
        return Err(Error::ZeroWeightSum);
    }
    PolicyValueEstimate::checked(weighted_reward_mean(fb, &weights.weights) / w_mean)
}

pub fn estimate_dr_ps(
    fb: &LoggedBanditFeedback,
    eval_dist: &ActionDistribution,
    weights: &ImportanceWeights,
    q_hat: &RewardPredictionMatrix,
    lambda: f64,
) -> Result<PolicyValueEstimate> {
    check_weights(fb, weights)?;
    check_model_inputs(fb, eval_dist, q_hat)?;
    let shrunk: Vec<f64> = weights.weights.iter().map(|&w| clip(w, lambda)).collect();
    PolicyValueEstimate::checked(doubly_robust_mean(fb, eval_dist, q_hat, &shrunk))
}

/// `E_n[dm_i] + E_n[rho_i (r_i - q_hat_i)] / E_n[rho_i]`, which equals the
/// per-sample self-normalized form and reduces exactly to SNIPW when `q_hat = 0`.
pub fn estimate_sndr(
    fb: &LoggedBanditFeedback,
    eval_dist: &ActionDistribution,
    weights: &ImportanceWeights,
    q_hat: &RewardPredictionMatrix,
) -> Result<PolicyValueEstimate> {
    check_weights(fb, weights)?;
    check_model_inputs(fb, eval_dist, q_hat)?;
    let w_mean = weights.mean();
    if !(w_mean > 0.0) {
        return Err(Error::ZeroWeightSum);
    }
    let dm = mean(q_hat.expected_under(eval_dist).into_iter());
    let q_logged = q_hat.at_logged(fb);
    let correction = mean(
        weights
            .weights
            .iter()
            .zip(fb.rewards.iter().zip(&q_logged))
            .map(|(w, (r, q))| w * (r - q)),
    );
    PolicyValueEstimate::checked(dm + correction / w_mean)
}

pub fn estimate_switch_dr(
    fb: &LoggedBanditFeedback,
    eval_dist: &ActionDistribution,
    weights: &ImportanceWeights,
    q_hat: &RewardPredictionMatrix,
    tau: f64,
) -> Result<PolicyValueEstimate> {
    check_weights(fb, weights)?;
    check_model_inputs(fb, eval_dist, q_hat)?;
    let shrunk: Vec<f64> = weights.weights.iter().map(|&w| switch(w, tau)).collect();
    PolicyValueEstimate::checked(doubly_robust_mean(fb, eval_dist, q_hat, &shrunk))
}

pub fn estimate_dros(
    fb: &LoggedBanditFeedback,
    eval_dist: &ActionDistribution,
    weights: &ImportanceWeights,
    q_hat: &RewardPredictionMatrix,
    lambda: f64,
) -> Result<PolicyValueEstimate> {
    check_weights(fb, weights)?;
    check_model_inputs(fb, eval_dist, q_hat)?;
    let shrunk: Vec<f64> = weights.weights.iter().map(|&w| optimistic(w, lambda)).collect();
    PolicyValueEstimate::checked(doubly_robust_mean(fb, eval_dist, q_hat, &shrunk))
}

fn clip(w: f64, lambda: f64) -> f64 {
    w.min(lambda)
}

fn switch(w: f64, tau: f64) -> f64 {
    if w <= tau {
        w
    } else {
        0.0
    }
}

fn optimistic(w: f64, lambda: f64) -> f64 {
    if lambda == f64::INFINITY {
        w
    } else if lambda == 0.0 || w == 0.0 {
        0.0
    } else {
        lambda * w / (w * w + lambda)
    }
}

/// The importance weight as modified by the estimator's hyperparameter.
pub fn shrunk_weights(
    weights: &ImportanceWeights,
    kind: EstimatorKind,
    params: &EstimatorHyperparams,
) -> Vec<f64> {
    let w = &weights.weights;
    match kind {
        EstimatorKind::IpwPs | EstimatorKind::DrPs => {
            w.iter().map(|&x| clip(x, params.lambda)).collect()
        }
        EstimatorKind::SwitchDr => w.iter().map(|&x| switch(x, params.tau)).collect(),
        EstimatorKind::DrOs => w.iter().map(|&x| optimistic(x, params.lambda)).collect(),
        EstimatorKind::Ipw | EstimatorKind::Dr | EstimatorKind::Snipw | EstimatorKind::Sndr => {
            w.clone()
        }
        EstimatorKind::Dm => vec![0.0; w.len()],
    }
}

/// Dispatches to the estimator named by `kind`.
pub fn estimate(
    kind: EstimatorKind,
    fb: &LoggedBanditFeedback,
    eval_dist: &ActionDistribution,
    weights: &ImportanceWeights,
    q_hat: Option<&RewardPredictionMatrix>,
    params: &EstimatorHyperparams,
) -> Result<PolicyValueEstimate> {
    let need_q = || q_hat.ok_or(Error::MissingRewardModel(kind.name()));
    match kind {
        EstimatorKind::Dm => {
            let q = need_q()?;
            check_model_inputs(fb, eval_dist, q)?;
            estimate_dm(eval_dist, q)
        }
        EstimatorKind::Ipw => estimate_ipw_ps(fb, weights, f64::INFINITY),
        EstimatorKind::IpwPs => estimate_ipw_ps(fb, weights, params.lambda),
        EstimatorKind::Snipw => estimate_snipw(fb, weights),
        EstimatorKind::Dr => estimate_dr_ps(fb, eval_dist, weights, need_q()?, f64::INFINITY),
        EstimatorKind::DrPs => estimate_dr_ps(fb, eval_dist, weights, need_q()?, params.lambda),
        EstimatorKind::Sndr => estimate_sndr(fb, eval_dist, weights, need_q()?),
        EstimatorKind::SwitchDr => {
            estimate_switch_dr(fb, eval_dist, weights, need_q()?, params.tau)
        }
        EstimatorKind::DrOs => estimate_dros(fb, eval_dist, weights, need_q()?, params.lambda),
    }
}

/// One cross-fitting fold: the rows it covers and the predictions of a
/// reward model trained without them.
#[derive(Debug, Clone)]
pub struct Fold {
    pub indices: Vec<usize>,
    pub predictions: RewardPredictionMatrix,
}

/// Checks that folds are disjoint, in range and of equal size. Up to `K - 1`
/// rows may be left uncovered (the remainder dropped to keep `n_k = n / K`).
pub fn check_partition(folds: &[Fold], n: usize) -> Result<()> {
    let k = folds.len();
    if k == 0 {
        return Err(Error::NotAPartition("no folds".into()));
    }
    let size = folds[0].indices.len();
    if size == 0 {
        return Err(Error::NotAPartition("empty fold".into()));
    }
    let mut seen = vec![false; n];
    for (f, fold) in folds.iter().enumerate() {
        if fold.indices.len() != size {
            return Err(Error::NotAPartition(format!(
                "fold {f} has {} rows, fold 0 has {size}",
                fold.indices.len()
            )));
        }
        if fold.predictions.n() != size {
            return Err(Error::NotAPartition(format!(
                "fold {f} has {} predictions for {size} rows",
                fold.predictions.n()
            )));
        }
        for &i in &fold.indices {
            if i >= n {
                return Err(Error::NotAPartition(format!("row {i} out of range")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::NotAPartition(format!("row {i} appears twice")));
            }
        }
    }
    let uncovered = n - k * size;
    if uncovered >= k {
        return Err(Error::NotAPartition(format!(
            "{uncovered} rows uncovered by {k} folds"
        )));
    }
    Ok(())
}

/// `K^{-1} sum_k V_hat(pi_e; D_k, q_hat_k)`. Self-normalizing estimators
/// normalize within each fold.
pub fn cross_fit_estimate(
    fb: &LoggedBanditFeedback,
    eval_dist: &ActionDistribution,
    weights: &ImportanceWeights,
    kind: EstimatorKind,
    params: &EstimatorHyperparams,
    folds: &[Fold],
) -> Result<PolicyValueEstimate> {
    check_weights(fb, weights)?;
    eval_dist.check_shape(fb)?;
    check_partition(folds, fb.n())?;
    let mut total = 0.0;
    for fold in folds {
        let sub_fb = fb.subset(&fold.indices);
        let sub_eval = eval_dist.subset(&fold.indices);
        let sub_w = weights.subset(&fold.indices);
        let v = estimate(kind, &sub_fb, &sub_eval, &sub_w, Some(&fold.predictions), params)?;
        total += v.value;
    }
    PolicyValueEstimate::checked(total / folds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::{compute_importance_weights, PropensitySource};
    use ndarray::array;

    /// The shared worked example: n=2, |A|=2, pi_b = 0.5, pi_e = [0.8, 0.2].
    fn worked() -> (
        LoggedBanditFeedback,
        ActionDistribution,
        ImportanceWeights,
        RewardPredictionMatrix,
    ) {
        let fb = LoggedBanditFeedback::new(
            array![[0.0], [1.0]],
            vec![0, 1],
            vec![1.0, 0.0],
            Some(vec![0.5, 0.5]),
            2,
            1.0,
        )
        .unwrap();
        let eval = ActionDistribution::new(array![[0.8, 0.2], [0.8, 0.2]]).unwrap();
        let w = compute_importance_weights(&eval, &fb, PropensitySource::LoggedTrue).unwrap();
        let q = RewardPredictionMatrix::constant(2, 2, 0.5);
        (fb, eval, w, q)
    }

    #[test]
    fn dm_examples() {
        let (_, eval, _, q) = worked();
        assert_eq!(estimate_dm(&eval, &q).unwrap().value, 0.5);
        let e1 = ActionDistribution::new(array![[0.8, 0.2]]).unwrap();
        let q1 = RewardPredictionMatrix::new(array![[1.0, 0.0]]).unwrap();
        assert_eq!(estimate_dm(&e1, &q1).unwrap().value, 0.8);
        assert_eq!(
            estimate_dm(&eval, &RewardPredictionMatrix::zeros(2, 2)).unwrap().value,
            0.0
        );
    }

    #[test]
    fn ipw_ps_examples() {
        let (fb, _, w, _) = worked();
        assert_eq!(w.weights, vec![1.6, 0.4]);
        assert!((estimate_ipw_ps(&fb, &w, f64::INFINITY).unwrap().value - 0.8).abs() < 1e-15);
        assert!((estimate_ipw_ps(&fb, &w, 1.0).unwrap().value - 0.5).abs() < 1e-15);
        let ones = ImportanceWeights::from_weights(vec![1.0, 1.0]).unwrap();
        assert_eq!(estimate_ipw_ps(&fb, &ones, f64::INFINITY).unwrap().value, fb.mean_reward());
    }

    #[test]
    fn snipw_examples() {
        let (fb, _, w, _) = worked();
        assert!((estimate_snipw(&fb, &w).unwrap().value - 0.8).abs() < 1e-15);
        let c = ImportanceWeights::from_weights(vec![3.0, 3.0]).unwrap();
        assert_eq!(estimate_snipw(&fb, &c).unwrap().value, 0.5);
        let z = ImportanceWeights::from_weights(vec![0.0, 0.0]).unwrap();
        assert!(matches!(estimate_snipw(&fb, &z), Err(Error::ZeroWeightSum)));
    }

    #[test]
    fn dr_ps_examples() {
        let (fb, eval, w, q) = worked();
        // (0.5 + 1.6*0.5 + 0.5 + 0.4*(-0.5)) / 2
        let v = estimate_dr_ps(&fb, &eval, &w, &q, f64::INFINITY).unwrap().value;
        assert!((v - 0.8).abs() < 1e-15);

        let zeros = RewardPredictionMatrix::zeros(2, 2);
        assert_eq!(
            estimate_dr_ps(&fb, &eval, &w, &zeros, f64::INFINITY).unwrap(),
            estimate_ipw_ps(&fb, &w, f64::INFINITY).unwrap()
        );

        let ones = ImportanceWeights::from_weights(vec![1.0, 1.0]).unwrap();
        let q2 = RewardPredictionMatrix::new(array![[0.3, 0.9], [0.1, 0.6]]).unwrap();
        let dm = estimate_dm(&eval, &q2).unwrap().value;
        let resid = ((1.0 - 0.3) + (0.0 - 0.6)) / 2.0;
        let v = estimate_dr_ps(&fb, &eval, &ones, &q2, f64::INFINITY).unwrap().value;
        assert!((v - (dm + resid)).abs() < 1e-15);
    }

    #[test]
    fn sndr_examples() {
        let (fb, eval, w, q) = worked();
        let zeros = RewardPredictionMatrix::zeros(2, 2);
        assert_eq!(
            estimate_sndr(&fb, &eval, &w, &zeros).unwrap(),
            estimate_snipw(&fb, &w).unwrap()
        );
        let v = estimate_sndr(&fb, &eval, &w, &q).unwrap().value;
        assert!((v - 0.8).abs() < 1e-15);

        let equal = ImportanceWeights::from_weights(vec![1.0, 1.0]).unwrap();
        let a = estimate_sndr(&fb, &eval, &equal, &q).unwrap().value;
        let b = estimate_dr_ps(&fb, &eval, &equal, &q, f64::INFINITY).unwrap().value;
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn switch_dr_examples() {
        let (fb, eval, w, q) = worked();
        assert_eq!(
            estimate_switch_dr(&fb, &eval, &w, &q, 0.0).unwrap(),
            estimate_dm(&eval, &q).unwrap()
        );
        assert_eq!(
            estimate_switch_dr(&fb, &eval, &w, &q, f64::INFINITY).unwrap(),
            estimate_dr_ps(&fb, &eval, &w, &q, f64::INFINITY).unwrap()
        );
        let v = estimate_switch_dr(&fb, &eval, &w, &q, 1.0).unwrap().value;
        assert!((v - 0.4).abs() < 1e-15);
    }

    #[test]
    fn dros_examples() {
        let (fb, eval, w, q) = worked();
        assert_eq!(
            estimate_dros(&fb, &eval, &w, &q, 0.0).unwrap(),
            estimate_dm(&eval, &q).unwrap()
        );
        assert_eq!(optimistic(1.0, 1.0), 0.5);
        let big = estimate_dros(&fb, &eval, &w, &q, 1e12).unwrap().value;
        let dr = estimate_dr_ps(&fb, &eval, &w, &q, f64::INFINITY).unwrap().value;
        assert!((big - dr).abs() < 1e-6);
    }

    #[test]
    fn shrunk_weight_examples() {
        let w = ImportanceWeights::from_weights(vec![2.0, 0.5]).unwrap();
        let p = EstimatorHyperparams {
            lambda: 1.0,
            tau: 1.0,
            ..Default::default()
        };
        assert_eq!(shrunk_weights(&w, EstimatorKind::IpwPs, &p), vec![1.0, 0.5]);
        assert_eq!(shrunk_weights(&w, EstimatorKind::SwitchDr, &p), vec![0.0, 0.5]);
        assert_eq!(shrunk_weights(&w, EstimatorKind::Dm, &p), vec![0.0, 0.0]);
        assert_eq!(shrunk_weights(&w, EstimatorKind::Snipw, &p), vec![2.0, 0.5]);
    }

    #[test]
    fn estimator_names_round_trip() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.name().parse::<EstimatorKind>().unwrap(), k);
        }
        assert_eq!("Switch-DR".parse::<EstimatorKind>().unwrap(), EstimatorKind::SwitchDr);
        assert!(matches!("magic".parse::<EstimatorKind>(), Err(Error::UnknownEstimator(_))));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let (fb, eval, _, q) = worked();
        let short = ImportanceWeights::from_weights(vec![1.0]).unwrap();
        assert!(matches!(
            estimate_dr_ps(&fb, &eval, &short, &q, 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn single_fold_matches_direct_call() {
        let (fb, eval, w, q) = worked();
        let folds = vec![Fold {
            indices: vec![0, 1],
            predictions: q.clone(),
        }];
        let p = EstimatorHyperparams::default();
        for kind in EstimatorKind::ALL {
            let direct = estimate(kind, &fb, &eval, &w, Some(&q), &p).unwrap();
            let cf = cross_fit_estimate(&fb, &eval, &w, kind, &p, &folds).unwrap();
            assert_eq!(direct, cf, "{kind}");
        }
    }

    #[test]
    fn two_fold_dr_is_mean_of_fold_estimates() {
        // Brute force: evaluate DR on each fold by hand.
        let fb = LoggedBanditFeedback::new(
            array![[0.0], [1.0], [2.0], [3.0]],
            vec![0, 1, 1, 0],
            vec![1.0, 0.0, 1.0, 1.0],
            Some(vec![0.5; 4]),
            2,
            1.0,
        )
        .unwrap();
        let eval = ActionDistribution::new(array![[0.8, 0.2], [0.8, 0.2], [0.3, 0.7], [0.3, 0.7]])
            .unwrap();
        let w = compute_importance_weights(&eval, &fb, PropensitySource::LoggedTrue).unwrap();
        // weights: [1.6, 0.4, 1.4, 0.6]
        let q_a = RewardPredictionMatrix::new(array![[0.2, 0.4], [0.6, 0.1]]).unwrap(); // rows 0, 2
        let q_b = RewardPredictionMatrix::new(array![[0.5, 0.5], [0.9, 0.3]]).unwrap(); // rows 1, 3
        let folds = vec![
            Fold { indices: vec![0, 2], predictions: q_a },
            Fold { indices: vec![1, 3], predictions: q_b },
        ];
        // fold A: row0 dm=0.8*0.2+0.2*0.4=0.24, corr=1.6*(1-0.2)=1.28
        //         row2 dm=0.3*0.6+0.7*0.1=0.25, corr=1.4*(1-0.1)=1.26
        let fold_a = (0.24 + 1.28 + 0.25 + 1.26) / 2.0;
        // fold B: row1 dm=0.5, corr=0.4*(0-0.5)=-0.2
        //         row3 dm=0.3*0.9+0.7*0.3=0.48, corr=0.6*(1-0.9)=0.06
        let fold_b = (0.5 - 0.2 + 0.48 + 0.06) / 2.0;
        let v = cross_fit_estimate(&fb, &eval, &w, EstimatorKind::Dr, &EstimatorHyperparams::default(), &folds)
            .unwrap()
            .value;
        assert!((v - (fold_a + fold_b) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn overlapping_folds_are_rejected() {
        let q = RewardPredictionMatrix::zeros(2, 2);
        let folds = vec![
            Fold { indices: vec![0, 1], predictions: q.clone() },
            Fold { indices: vec![1, 2], predictions: q },
        ];
        assert!(matches!(check_partition(&folds, 4), Err(Error::NotAPartition(_))));
        let q1 = RewardPredictionMatrix::zeros(1, 2);
        let uneven = vec![
            Fold { indices: vec![0], predictions: q1 },
            Fold { indices: vec![1, 2], predictions: RewardPredictionMatrix::zeros(2, 2) },
        ];
        assert!(check_partition(&uneven, 3).is_err());
    }
}

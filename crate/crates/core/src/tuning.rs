//! Data-driven choice of `lambda` / `tau` by minimizing
//! `BiasUB(theta)^2 + V_n(theta)` with the direct bias estimation bound.

use serde::{Deserialize, Serialize};

use crate::bandit::{ActionDistribution, ImportanceWeights, LoggedBanditFeedback, RewardPredictionMatrix};
use crate::error::{Error, Result};
use crate::estimators::{per_sample_terms, shrunk_weights, EstimatorHyperparams, EstimatorKind, ShrinkageParam};

pub const DEFAULT_DELTA: f64 = 0.05;

/// `{1, 5, 10, 50, ..., 1e5, inf}`.
pub const DEFAULT_GRID: [f64; 12] = [
    1.0,
    5.0,
    10.0,
    50.0,
    100.0,
    500.0,
    1e3,
    5e3,
    1e4,
    5e4,
    1e5,
    f64::INFINITY,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningConfig {
    pub delta: f64,
    pub candidate_grid: Vec<f64>,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            candidate_grid: DEFAULT_GRID.to_vec(),
        }
    }
}

impl TuningConfig {
    pub fn validate(&self) -> Result<()> {
        check_delta(self.delta)?;
        check_grid(&self.candidate_grid)
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta <= 1.0 {
        Ok(())
    } else {
        Err(Error::DeltaOutOfRange(delta))
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if let Some(v) = grid.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::invalid("candidate_grid", format!("values must be >= 0, got {v}")));
    }
    Ok(())
}

/// High-probability upper bound on the bias of a shrunk-weight estimator:
///
/// `|E_n[(w_i - rho_i)(r_i - q_hat(x_i, a_i))]|
///   + sqrt(2 E_n[rho^2] log(2/delta) / n) + 2 rho_max log(2/delta) / (3n)`.
///
/// Without a reward model the residual is `r_i` itself.
pub fn direct_bias_ub(
    weights: &ImportanceWeights,
    shrunk: &[f64],
    fb: &LoggedBanditFeedback,
    q_hat: Option<&RewardPredictionMatrix>,
    delta: f64,
) -> Result<f64> {
    check_delta(delta)?;
    let n = fb.n();
    for (what, len) in [("importance weights", weights.len()), ("shrunk weights", shrunk.len())] {
        if len != n {
            return Err(Error::DimensionMismatch {
                what,
                expected: n,
                found: len,
            });
        }
    }
    let q_logged = match q_hat {
        Some(q) => q.at_logged(fb),
        None => vec![0.0; n],
    };
    let nf = n as f64;
    let mut bias = 0.0;
    let mut second = 0.0;
    for i in 0..n {
        let rho = weights.weights[i];
        bias += (shrunk[i] - rho) * (fb.rewards[i] - q_logged[i]);
        second += rho * rho;
    }
    let log_term = (2.0 / delta).ln();
    Ok((bias / nf).abs()
        + (2.0 * (second / nf) * log_term / nf).sqrt()
        + 2.0 * weights.rho_max * log_term / (3.0 * nf))
}

/// `S^2 / n` with `S^2` the unbiased sample variance of the terms.
pub fn sample_variance(terms: &[f64]) -> Result<f64> {
    let n = terms.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, found: n });
    }
    let nf = n as f64;
    let mean = terms.iter().sum::<f64>() / nf;
    let ss: f64 = terms.iter().map(|t| (t - mean) * (t - mean)).sum();
    Ok(ss / (nf - 1.0) / nf)
}

/// `BiasUB^2 + V_n` for one candidate value of the estimator's shrinkage
/// parameter.
pub fn tuning_objective(
    kind: EstimatorKind,
    candidate: f64,
    fb: &LoggedBanditFeedback,
    eval_dist: &ActionDistribution,
    weights: &ImportanceWeights,
    q_hat: Option<&RewardPredictionMatrix>,
    delta: f64,
) -> Result<f64> {
    let mut params = EstimatorHyperparams::default();
    match kind.shrinkage_param() {
        Some(ShrinkageParam::Lambda) => params.lambda = candidate,
        Some(ShrinkageParam::Tau) => params.tau = candidate,
        None => {
            return Err(Error::invalid(
                "estimator",
                format!("{kind} has no shrinkage hyperparameter to tune"),
            ))
        }
    }
    let shrunk = shrunk_weights(weights, kind, &params);
    let bias = direct_bias_ub(weights, &shrunk, fb, q_hat, delta)?;
    let q = if kind.uses_reward_model() { q_hat } else { None };
    let var = sample_variance(&per_sample_terms(fb, eval_dist, q, &shrunk))?;
    Ok(bias * bias + var)
}

/// The grid value minimizing `BiasUB^2 + V_n`. Ties (and non-finite scores)
/// resolve toward the smallest candidate, with infinity the largest.
pub fn select_hyperparameter(
    kind: EstimatorKind,
    candidate_grid: &[f64],
    fb: &LoggedBanditFeedback,
    eval_dist: &ActionDistribution,
    weights: &ImportanceWeights,
    q_hat: Option<&RewardPredictionMatrix>,
    delta: f64,
) -> Result<f64> {
    check_grid(candidate_grid)?;
    check_delta(delta)?;
    let mut best: Option<(f64, f64)> = None;
    for &c in candidate_grid {
        let mut score = tuning_objective(kind, c, fb, eval_dist, weights, q_hat, delta)?;
        if score.is_nan() {
            score = f64::INFINITY;
        }
        best = match best {
            None => Some((score, c)),
            Some((s, v)) if score < s || (score == s && c < v) => Some((score, c)),
            keep => keep,
        };
    }
    Ok(best.expect("grid is nonempty").1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn feedback(rewards: Vec<f64>) -> LoggedBanditFeedback {
        let n = rewards.len();
        LoggedBanditFeedback::new(Array2::zeros((n, 1)), vec![0; n], rewards, Some(vec![0.5; n]), 2, 1.0)
            .unwrap()
    }

    #[test]
    fn unclipped_unit_weights() {
        let fb = feedback(vec![1.0, 0.0]);
        let w = ImportanceWeights::from_weights(vec![1.0, 1.0]).unwrap();
        let delta = 2.0 / std::f64::consts::E;
        let ub = direct_bias_ub(&w, &w.weights, &fb, None, delta).unwrap();
        assert!((ub - 4.0 / 3.0).abs() < 1e-12, "{ub}");
    }

    #[test]
    fn clipped_weights_hand_value() {
        let fb = feedback(vec![1.0, 1.0]);
        let w = ImportanceWeights::from_weights(vec![2.0, 0.5]).unwrap();
        let ub = direct_bias_ub(&w, &[1.0, 0.5], &fb, None, 2.0 / std::f64::consts::E).unwrap();
        assert!((ub - 2.6244).abs() < 1e-3, "{ub}");
    }

    #[test]
    fn zero_residuals_zero_bias_term() {
        let fb = feedback(vec![0.5, 0.5, 0.5]);
        let q = RewardPredictionMatrix::constant(3, 2, 0.5);
        let w = ImportanceWeights::from_weights(vec![3.0, 0.1, 1.0]).unwrap();
        let full = direct_bias_ub(&w, &[0.0, 0.0, 0.0], &fb, Some(&q), 0.05).unwrap();
        let tails = direct_bias_ub(&w, &w.weights, &fb, Some(&q), 0.05).unwrap();
        assert_eq!(full, tails);
    }

    #[test]
    fn variance_examples() {
        assert_eq!(sample_variance(&[3.0, 3.0, 3.0]).unwrap(), 0.0);
        assert_eq!(sample_variance(&[0.0, 1.0]).unwrap(), 0.25);
        let v = sample_variance(&[0.2, 1.0, 4.0]).unwrap();
        let v3 = sample_variance(&[0.6, 3.0, 12.0]).unwrap();
        assert!((v3 - 9.0 * v).abs() < 1e-12);
        assert!(matches!(sample_variance(&[1.0]), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn delta_is_checked() {
        let fb = feedback(vec![1.0]);
        let w = ImportanceWeights::from_weights(vec![1.0]).unwrap();
        assert!(matches!(
            direct_bias_ub(&w, &[1.0], &fb, None, 0.0),
            Err(Error::DeltaOutOfRange(_))
        ));
        assert!(matches!(
            direct_bias_ub(&w, &[1.0], &fb, None, 1.5),
            Err(Error::DeltaOutOfRange(_))
        ));
    }

    #[test]
    fn single_candidate_and_ties() {
        let fb = feedback(vec![1.0, 0.0, 1.0]);
        let eval = ActionDistribution::uniform(3, 2);
        let w = ImportanceWeights::from_weights(vec![1.0, 1.0, 1.0]).unwrap();
        let pick = |grid: &[f64]| select_hyperparameter(EstimatorKind::IpwPs, grid, &fb, &eval, &w, None, 0.05).unwrap();
        assert_eq!(pick(&[7.0]), 7.0);
        // Every lambda >= 1 leaves unit weights untouched, so scores tie.
        assert_eq!(pick(&[f64::INFINITY, 10.0, 2.0]), 2.0);
        assert!(matches!(
            select_hyperparameter(EstimatorKind::IpwPs, &[], &fb, &eval, &w, None, 0.05),
            Err(Error::EmptyGrid)
        ));
    }

    #[test]
    fn extreme_weight_prefers_clipping() {
        // The concentration terms do not scale with rewards while the variance
        // does, so the extreme weight must sit on a large reward.
        let n = 200;
        let mut weights = vec![1.0; n];
        weights[0] = 1e4;
        let mut rewards = vec![50.0; n];
        rewards[0] = 100.0;
        let fb = LoggedBanditFeedback::new(Array2::zeros((n, 1)), vec![0; n], rewards, None, 2, 100.0).unwrap();
        let eval = ActionDistribution::uniform(n, 2);
        let w = ImportanceWeights::from_weights(weights).unwrap();
        let obj = |c| tuning_objective(EstimatorKind::IpwPs, c, &fb, &eval, &w, None, 0.05).unwrap();
        assert!(obj(5e3) < obj(f64::INFINITY), "{} vs {}", obj(5e3), obj(f64::INFINITY));
        let chosen = select_hyperparameter(EstimatorKind::IpwPs, &DEFAULT_GRID, &fb, &eval, &w, None, 0.05).unwrap();
        assert!(chosen < 1e4);
    }
}

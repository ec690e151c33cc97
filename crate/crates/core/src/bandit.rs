//! Core data model: logged bandit feedback, action distributions, importance
//! weights and reward prediction matrices.
//!
//! Every type here is immutable once built and validated, so the evaluator
//! can share them freely across worker threads.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Row-sum tolerance of a stochastic row.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Rows off by more than [`ROW_SUM_TOL`] but within this are renormalized.
pub const RENORMALIZE_TOL: f64 = 1e-6;

/// A logged dataset `{(x_i, a_i, r_i)}` with optional logging propensities.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedBanditFeedback {
    /// `n x d` context matrix.
    pub contexts: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// `pi_b(a_i | x_i)` for each logged pair, when recorded.
    pub propensities: Option<Vec<f64>>,
    pub n_actions: usize,
    pub r_max: f64,
}

impl LoggedBanditFeedback {
    /// Builds and validates a dataset.
    pub fn new(
        contexts: Array2<f64>,
        actions: Vec<usize>,
        rewards: Vec<f64>,
        propensities: Option<Vec<f64>>,
        n_actions: usize,
        r_max: f64,
    ) -> Result<Self> {
        let fb = Self {
            contexts,
            actions,
            rewards,
            propensities,
            n_actions,
            r_max,
        };
        validate_feedback(&fb)?;
        Ok(fb)
    }

    pub fn n(&self) -> usize {
        self.actions.len()
    }

    pub fn dim_context(&self) -> usize {
        self.contexts.ncols()
    }

    pub fn context(&self, i: usize) -> ArrayView1<'_, f64> {
        self.contexts.row(i)
    }

    /// Rows selected by `indices`, in that order (repeats allowed).
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            contexts: self.contexts.select(Axis(0), indices),
            actions: indices.iter().map(|&i| self.actions[i]).collect(),
            rewards: indices.iter().map(|&i| self.rewards[i]).collect(),
            propensities: self
                .propensities
                .as_ref()
                .map(|p| indices.iter().map(|&i| p[i]).collect()),
            n_actions: self.n_actions,
            r_max: self.r_max,
        }
    }

    /// Stacks datasets row-wise. Propensities survive only if every part has them.
    pub fn concat(parts: &[&Self]) -> Result<Self> {
        let first = parts.first().ok_or(Error::EmptyFeedback)?;
        for p in parts {
            if p.dim_context() != first.dim_context() {
                return Err(Error::DimensionMismatch {
                    what: "context dimension",
                    expected: first.dim_context(),
                    found: p.dim_context(),
                });
            }
            if p.n_actions != first.n_actions {
                return Err(Error::DimensionMismatch {
                    what: "number of actions",
                    expected: first.n_actions,
                    found: p.n_actions,
                });
            }
        }
        let views: Vec<_> = parts.iter().map(|p| p.contexts.view()).collect();
        let contexts = ndarray::concatenate(Axis(0), &views).map_err(|e| {
            Error::invalid("contexts", e.to_string())
        })?;
        let propensities = if parts.iter().all(|p| p.propensities.is_some()) {
            Some(
                parts
                    .iter()
                    .flat_map(|p| p.propensities.as_ref().unwrap().iter().copied())
                    .collect(),
            )
        } else {
            None
        };
        Self::new(
            contexts,
            parts.iter().flat_map(|p| p.actions.iter().copied()).collect(),
            parts.iter().flat_map(|p| p.rewards.iter().copied()).collect(),
            propensities,
            first.n_actions,
            parts.iter().map(|p| p.r_max).fold(0.0, f64::max),
        )
    }

    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.n() as f64
    }

    /// True when every reward is exactly 0 or 1.
    pub fn has_binary_rewards(&self) -> bool {
        self.rewards.iter().all(|&r| r == 0.0 || r == 1.0)
    }
}

/// Checks every [`LoggedBanditFeedback`] invariant, naming the first offending index.
pub fn validate_feedback(fb: &LoggedBanditFeedback) -> Result<()> {
    let n = fb.actions.len();
    if n == 0 {
        return Err(Error::EmptyFeedback);
    }
    if fb.n_actions == 0 {
        return Err(Error::invalid("n_actions", "must be positive"));
    }
    if !(fb.r_max > 0.0 && fb.r_max.is_finite()) {
        return Err(Error::invalid("r_max", format!("must be positive, got {}", fb.r_max)));
    }
    if fb.contexts.nrows() != n {
        return Err(Error::DimensionMismatch {
            what: "contexts rows",
            expected: n,
            found: fb.contexts.nrows(),
        });
    }
    if fb.rewards.len() != n {
        return Err(Error::DimensionMismatch {
            what: "rewards",
            expected: n,
            found: fb.rewards.len(),
        });
    }
    if let Some(p) = &fb.propensities {
        if p.len() != n {
            return Err(Error::DimensionMismatch {
                what: "propensities",
                expected: n,
                found: p.len(),
            });
        }
    }
    for (index, &action) in fb.actions.iter().enumerate() {
        if action >= fb.n_actions {
            return Err(Error::ActionOutOfRange {
                index,
                action,
                n_actions: fb.n_actions,
            });
        }
    }
    for (index, &value) in fb.rewards.iter().enumerate() {
        if !(0.0..=fb.r_max).contains(&value) {
            return Err(Error::RewardOutOfRange {
                index,
                value,
                r_max: fb.r_max,
            });
        }
    }
    if let Some(p) = &fb.propensities {
        for (index, &value) in p.iter().enumerate() {
            if !(value > 0.0 && value <= 1.0) {
                return Err(Error::NonPositivePropensity { index, value });
            }
        }
    }
    Ok(())
}

/// A policy evaluated at a set of contexts: row `i` is `pi(. | x_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    probs: Array2<f64>,
}

impl ActionDistribution {
    /// Validates a row-stochastic matrix. Rows within [`RENORMALIZE_TOL`] of
    /// summing to one are renormalized; anything further off is rejected.
    pub fn new(mut probs: Array2<f64>) -> Result<Self> {
        if probs.ncols() == 0 {
            return Err(Error::invalid("probs", "needs at least one action column"));
        }
        for (row, mut r) in probs.axis_iter_mut(Axis(0)).enumerate() {
            let min = r.iter().copied().fold(f64::INFINITY, f64::min);
            let sum: f64 = r.iter().sum();
            if !(min >= 0.0) || !sum.is_finite() {
                return Err(Error::NotStochastic { row, sum, min });
            }
            let gap = (sum - 1.0).abs();
            if gap > RENORMALIZE_TOL {
                return Err(Error::NotStochastic { row, sum, min });
            }
            if gap > ROW_SUM_TOL {
                r.mapv_inplace(|p| p / sum);
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize, n_actions: usize) -> Self {
        Self {
            probs: Array2::from_elem((n, n_actions), 1.0 / n_actions as f64),
        }
    }

    pub fn n(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn prob(&self, i: usize, a: usize) -> f64 {
        self.probs[[i, a]]
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.probs.row(i)
    }

    pub fn probs(&self) -> ArrayView2<'_, f64> {
        self.probs.view()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            probs: self.probs.select(Axis(0), indices),
        }
    }

    pub fn concat(parts: &[&Self]) -> Result<Self> {
        let views: Vec<_> = parts.iter().map(|p| p.probs.view()).collect();
        let probs = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| Error::invalid("probs", e.to_string()))?;
        Ok(Self { probs })
    }

    /// Mixes every row with the uniform distribution so that no entry falls
    /// below `floor`: `p' = floor + (1 - K floor) p`. Returns the new
    /// distribution and the number of entries that were below `floor`.
    pub fn floored(&self, floor: f64) -> (Self, usize) {
        let k = self.n_actions() as f64;
        let below = self.probs.iter().filter(|&&p| p < floor).count();
        if below == 0 || floor * k >= 1.0 {
            return (self.clone(), below);
        }
        let scale = 1.0 - k * floor;
        (
            Self {
                probs: self.probs.mapv(|p| floor + scale * p),
            },
            below,
        )
    }

    pub(crate) fn check_shape(&self, fb: &LoggedBanditFeedback) -> Result<()> {
        if self.n() != fb.n() {
            return Err(Error::DimensionMismatch {
                what: "action distribution rows",
                expected: fb.n(),
                found: self.n(),
            });
        }
        if self.n_actions() != fb.n_actions {
            return Err(Error::DimensionMismatch {
                what: "action distribution columns",
                expected: fb.n_actions,
                found: self.n_actions(),
            });
        }
        Ok(())
    }
}

/// Where `pi_b(a_i | x_i)` comes from when forming importance weights.
#[derive(Debug, Clone, Copy)]
pub enum PropensitySource<'a> {
    /// The propensities recorded in the log.
    LoggedTrue,
    /// An estimated behavior distribution over the logged contexts.
    EstimatedDistribution(&'a ActionDistribution),
}

/// `rho_i = pi_e(a_i | x_i) / pi_b(a_i | x_i)` over the logged pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceWeights {
    pub weights: Vec<f64>,
    /// Maximum over the logged pairs.
    pub rho_max: f64,
}

impl ImportanceWeights {
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if let Some(index) = weights.iter().position(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid(
                "weights",
                format!("weight {} at index {index} is not a finite nonnegative number", weights[index]),
            ));
        }
        let rho_max = weights.iter().copied().fold(0.0, f64::max);
        Ok(Self { weights, rho_max })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Weights at `indices`; `rho_max` is recomputed over the subset.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let weights: Vec<f64> = indices.iter().map(|&i| self.weights[i]).collect();
        let rho_max = weights.iter().copied().fold(0.0, f64::max);
        Self { weights, rho_max }
    }

    /// Mean of the weights.
    pub fn mean(&self) -> f64 {
        self.weights.iter().sum::<f64>() / self.weights.len() as f64
    }
}

pub fn compute_importance_weights(
    eval_dist: &ActionDistribution,
    fb: &LoggedBanditFeedback,
    source: PropensitySource<'_>,
) -> Result<ImportanceWeights> {
    eval_dist.check_shape(fb)?;
    let weights = match source {
        PropensitySource::LoggedTrue => {
            let p = fb.propensities.as_ref().ok_or(Error::MissingPropensities)?;
            fb.actions
                .iter()
                .zip(p)
                .enumerate()
                .map(|(i, (&a, &pb))| eval_dist.prob(i, a) / pb)
                .collect()
        }
        PropensitySource::EstimatedDistribution(behavior) => {
            behavior.check_shape(fb)?;
            let mut w = Vec::with_capacity(fb.n());
            for (i, &a) in fb.actions.iter().enumerate() {
                let pb = behavior.prob(i, a);
                if pb <= 0.0 {
                    return Err(Error::ZeroEstimatedPropensity { index: i });
                }
                w.push(eval_dist.prob(i, a) / pb);
            }
            w
        }
    };
    ImportanceWeights::from_weights(weights)
}

/// `q_hat(x_i, a)` for every logged row and action.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardPredictionMatrix {
    values: Array2<f64>,
}

impl RewardPredictionMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(((i, a), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(
                "reward predictions",
                format!("non-finite prediction {v} at ({i}, {a})"),
            ));
        }
        Ok(Self { values })
    }

    pub fn constant(n: usize, n_actions: usize, value: f64) -> Self {
        Self {
            values: Array2::from_elem((n, n_actions), value),
        }
    }

    pub fn zeros(n: usize, n_actions: usize) -> Self {
        Self::constant(n, n_actions, 0.0)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, i: usize, a: usize) -> f64 {
        self.values[[i, a]]
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            values: self.values.select(Axis(0), indices),
        }
    }

    /// `E_{a ~ pi_e}[q_hat(x_i, a)]` for every row.
    pub fn expected_under(&self, eval_dist: &ActionDistribution) -> Vec<f64> {
        self.values
            .outer_iter()
            .zip(eval_dist.probs.outer_iter())
            .map(|(q, p)| q.iter().zip(p.iter()).map(|(q, p)| q * p).sum())
            .collect()
    }

    /// `q_hat(x_i, a_i)` at the logged actions.
    pub fn at_logged(&self, fb: &LoggedBanditFeedback) -> Vec<f64> {
        fb.actions
            .iter()
            .enumerate()
            .map(|(i, &a)| self.values[[i, a]])
            .collect()
    }

    pub(crate) fn check_shape(&self, fb: &LoggedBanditFeedback) -> Result<()> {
        if self.n() != fb.n() {
            return Err(Error::DimensionMismatch {
                what: "reward prediction rows",
                expected: fb.n(),
                found: self.n(),
            });
        }
        if self.n_actions() != fb.n_actions {
            return Err(Error::DimensionMismatch {
                what: "reward prediction columns",
                expected: fb.n_actions,
                found: self.n_actions(),
            });
        }
        Ok(())
    }
}

/// A stochastic policy over a finite action set.
pub trait Policy: Send + Sync {
    fn n_actions(&self) -> usize;

    /// `pi(. | x)` for a single context.
    fn distribution(&self, context: ArrayView1<'_, f64>) -> Vec<f64>;

    /// The policy evaluated at every row of `contexts`.
    fn action_distribution(&self, contexts: ArrayView2<'_, f64>) -> Result<ActionDistribution> {
        let mut probs = Array2::zeros((contexts.nrows(), self.n_actions()));
        for (mut out, x) in probs.outer_iter_mut().zip(contexts.outer_iter()) {
            for (o, p) in out.iter_mut().zip(self.distribution(x)) {
                *o = p;
            }
        }
        ActionDistribution::new(probs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_rows() -> LoggedBanditFeedback {
        LoggedBanditFeedback::new(
            array![[0.0], [1.0]],
            vec![0, 1],
            vec![1.0, 0.0],
            Some(vec![0.5, 0.5]),
            2,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn consistent_dataset_validates() {
        assert!(validate_feedback(&two_rows()).is_ok());
    }

    #[test]
    fn reward_above_bound_is_rejected() {
        let err = LoggedBanditFeedback::new(array![[0.0]], vec![0], vec![1.5], None, 1, 1.0)
            .unwrap_err();
        assert!(matches!(err, Error::RewardOutOfRange { index: 0, .. }));
    }

    #[test]
    fn zero_propensity_is_rejected() {
        let err =
            LoggedBanditFeedback::new(array![[0.0]], vec![0], vec![1.0], Some(vec![0.0]), 1, 1.0)
                .unwrap_err();
        assert!(matches!(err, Error::NonPositivePropensity { index: 0, .. }));
    }

    #[test]
    fn length_mismatch_and_bad_action_are_rejected() {
        let err = LoggedBanditFeedback::new(array![[0.0], [1.0]], vec![0, 1], vec![1.0], None, 2, 1.0)
            .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { what: "rewards", .. }));
        let err = LoggedBanditFeedback::new(array![[0.0]], vec![3], vec![1.0], None, 2, 1.0)
            .unwrap_err();
        assert!(matches!(err, Error::ActionOutOfRange { index: 0, action: 3, .. }));
    }

    #[test]
    fn identical_policies_give_unit_weights() {
        let fb = two_rows();
        let dist = ActionDistribution::new(array![[0.5, 0.5], [0.5, 0.5]]).unwrap();
        let w = compute_importance_weights(&dist, &fb, PropensitySource::LoggedTrue).unwrap();
        assert_eq!(w.weights, vec![1.0, 1.0]);
        assert_eq!(w.rho_max, 1.0);

        let w = compute_importance_weights(&dist, &fb, PropensitySource::EstimatedDistribution(&dist))
            .unwrap();
        assert_eq!(w.weights, vec![1.0, 1.0]);
    }

    #[test]
    fn weights_are_direct_ratios() {
        let fb = two_rows();
        let eval = ActionDistribution::new(array![[0.8, 0.2], [0.8, 0.2]]).unwrap();
        let w = compute_importance_weights(&eval, &fb, PropensitySource::LoggedTrue).unwrap();
        assert_eq!(w.weights, vec![1.6, 0.4]);
        assert_eq!(w.rho_max, 1.6);
    }

    #[test]
    fn zero_estimated_propensity_names_index() {
        let fb = two_rows();
        let eval = ActionDistribution::uniform(2, 2);
        let est = ActionDistribution::new(array![[0.5, 0.5], [1.0, 0.0]]).unwrap();
        let err = compute_importance_weights(&eval, &fb, PropensitySource::EstimatedDistribution(&est))
            .unwrap_err();
        assert!(matches!(err, Error::ZeroEstimatedPropensity { index: 1 }));
    }

    #[test]
    fn missing_propensities_error() {
        let mut fb = two_rows();
        fb.propensities = None;
        let eval = ActionDistribution::uniform(2, 2);
        let err = compute_importance_weights(&eval, &fb, PropensitySource::LoggedTrue).unwrap_err();
        assert!(matches!(err, Error::MissingPropensities));
    }

    #[test]
    fn near_stochastic_rows_are_renormalized() {
        let d = ActionDistribution::new(array![[0.5, 0.5 + 5e-7]]).unwrap();
        assert!((d.row(0).sum() - 1.0).abs() <= ROW_SUM_TOL);
        assert!(ActionDistribution::new(array![[0.5, 0.6]]).is_err());
        assert!(ActionDistribution::new(array![[1.2, -0.2]]).is_err());
    }

    #[test]
    fn flooring_keeps_rows_stochastic() {
        let d = ActionDistribution::new(array![[1.0, 0.0, 0.0]]).unwrap();
        let (f, below) = d.floored(1e-7);
        assert_eq!(below, 2);
        assert!(f.probs().iter().all(|&p| p >= 1e-7));
        assert!((f.row(0).sum() - 1.0).abs() < 1e-12);
    }
}

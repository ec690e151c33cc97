//! Summaries of a squared-error sample `Z`: empirical CDF, AU-CDF, CVaR,
//! standard deviation and mean.
//!
//! Infinite entries (failed runs) are legal: they sit above every finite
//! threshold, contribute nothing to AU-CDF and make mean, CVaR and Std
//! infinite.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn sorted(z: &[f64]) -> Vec<f64> {
    let mut s = z.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// The right-continuous step function `F(z) = #{z_i <= z} / m`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(z: &[f64]) -> Result<Self> {
        if z.is_empty() {
            return Err(Error::EmptyInput);
        }
        if z.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("z", "NaN in sample"));
        }
        Ok(Self { sorted: sorted(z) })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn eval(&self, z: f64) -> f64 {
        let c = self.sorted.partition_point(|&v| v <= z);
        c as f64 / self.sorted.len() as f64
    }

    /// Distinct jump locations with the CDF value reached at each.
    pub fn steps(&self) -> Vec<(f64, f64)> {
        let m = self.sorted.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, &v) in self.sorted.iter().enumerate() {
            let f = (i + 1) as f64 / m;
            match out.last_mut() {
                Some(last) if last.0 == v => last.1 = f,
                _ => out.push((v, f)),
            }
        }
        out
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted
    }
}

/// Convenience wrapper: `F(query)` for the sample `z`.
pub fn empirical_cdf(z: &[f64], query: f64) -> Result<f64> {
    Ok(EmpiricalCdf::new(z)?.eval(query))
}

/// `int_0^{z_max} F(z) dz`, exactly: each `z_i` contributes
/// `max(0, z_max - max(z_i, 0)) / m`.
pub fn au_cdf(z: &[f64], z_max: f64) -> Result<f64> {
    if !(z_max > 0.0) {
        return Err(Error::NonPositiveZmax(z_max));
    }
    if z.is_empty() {
        return Err(Error::EmptyInput);
    }
    let s = sorted(z);
    let total: f64 = s.iter().map(|&v| (z_max - v.max(0.0)).max(0.0)).sum();
    Ok(total / s.len() as f64)
}

/// `E[Z | Z >= q]` with `q` the smallest `z_i` such that `F(z_i) >= alpha`.
pub fn cvar(z: &[f64], alpha: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::AlphaOutOfRange(alpha));
    }
    if z.is_empty() {
        return Err(Error::EmptyInput);
    }
    let s = sorted(z);
    let m = s.len() as f64;
    let mut q = s[s.len() - 1];
    for &v in &s {
        let c = s.partition_point(|&w| w <= v);
        if c as f64 / m >= alpha {
            q = v;
            break;
        }
    }
    let start = s.partition_point(|&w| w < q);
    let tail = &s[start..];
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

pub fn mean_score(z: &[f64]) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(z.iter().sum::<f64>() / z.len() as f64)
}

/// Population standard deviation `sqrt(E[(Z - E[Z])^2])`.
pub fn std_score(z: &[f64]) -> Result<f64> {
    let mean = mean_score(z)?;
    if !mean.is_finite() {
        return Ok(f64::INFINITY);
    }
    let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / z.len() as f64;
    Ok(var.sqrt())
}

/// The four scores reported per estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryScores {
    pub mean: f64,
    pub au_cdf: f64,
    pub cvar: f64,
    pub std: f64,
}

impl SummaryScores {
    pub fn compute(z: &[f64], z_max: f64, alpha: f64) -> Result<Self> {
        Ok(Self {
            mean: mean_score(z)?,
            au_cdf: au_cdf(z, z_max)?,
            cvar: cvar(z, alpha)?,
            std: std_score(z)?,
        })
    }
}

/// Default cutoff for AU-CDF: the 99th percentile (nearest rank) of the
/// finite squared errors, falling back to their maximum and then to 1.
pub fn auto_z_max(pooled: &[f64]) -> f64 {
    let finite = sorted(&pooled.iter().copied().filter(|v| v.is_finite()).collect::<Vec<_>>());
    if finite.is_empty() {
        return 1.0;
    }
    let rank = ((0.99 * finite.len() as f64).ceil() as usize).clamp(1, finite.len());
    let p99 = finite[rank - 1];
    if p99 > 0.0 {
        return p99;
    }
    let max = finite[finite.len() - 1];
    if max > 0.0 {
        max
    } else {
        1.0
    }
}

/// `score / best`, where `best` is the maximum for higher-is-better scores and
/// the minimum otherwise. A zero best yields 1 for zero scores and infinity
/// for the rest.
pub fn normalize(scores: &[f64], higher_is_better: bool) -> Vec<f64> {
    let best = if higher_is_better {
        scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    } else {
        scores.iter().copied().fold(f64::INFINITY, f64::min)
    };
    scores
        .iter()
        .map(|&s| {
            if best == 0.0 {
                if s == 0.0 {
                    1.0
                } else {
                    f64::INFINITY
                }
            } else if s == best {
                1.0
            } else {
                s / best
            }
        })
        .collect()
}

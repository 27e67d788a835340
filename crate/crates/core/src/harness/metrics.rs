//! Error metrics, divergence and track-swap detection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{position, StateVec};

/// `MSE_t = mean over runs of (x_est - x)^2 + (y_est - y)^2`.
///
/// `estimates[run][t]` and `truth[run][t]` must have matching shapes.
pub fn compute_mse(estimates: &[Vec<StateVec>], truth: &[Vec<StateVec>]) -> Result<Vec<f64>> {
    if estimates.is_empty() || estimates.len() != truth.len() {
        return Err(Error::InvalidArgument(
            "one truth track per estimated run required".into(),
        ));
    }
    let steps = estimates[0].len();
    if estimates
        .iter()
        .zip(truth)
        .any(|(e, t)| e.len() != steps || t.len() != steps)
    {
        return Err(Error::InvalidArgument(
            "estimate and truth tracks must have equal lengths".into(),
        ));
    }
    let mut mse = vec![0.0; steps];
    for (e, t) in estimates.iter().zip(truth) {
        for (m, (a, b)) in mse.iter_mut().zip(e.iter().zip(t)) {
            *m += (position(a) - position(b)).norm_squared();
        }
    }
    let n = estimates.len() as f64;
    mse.iter_mut().for_each(|m| *m /= n);
    Ok(mse)
}

pub fn position_error(est: &StateVec, truth: &StateVec) -> f64 {
    (position(est) - position(truth)).norm()
}

/// Greedy nearest-neighbour assignment: repeatedly pairs the closest
/// remaining estimate and truth. `result[k]` is the truth index assigned to
/// estimate `k`.
pub fn nearest_neighbour_assignment(estimates: &[StateVec], truth: &[StateVec]) -> Vec<usize> {
    let k = estimates.len().min(truth.len());
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(estimates.len() * truth.len());
    for (i, e) in estimates.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            pairs.push((position_error(e, t), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![usize::MAX; estimates.len()];
    let mut used = vec![false; truth.len()];
    let mut done = 0;
    for (_, i, j) in pairs {
        if done == k {
            break;
        }
        if out[i] == usize::MAX && !used[j] {
            out[i] = j;
            used[j] = true;
            done += 1;
        }
    }
    out
}

/// Final-time outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackOutcome {
    /// Truth index assigned to each estimate.
    pub assignment: Vec<usize>,
    /// Position error of each estimate against its assigned truth.
    pub errors: Vec<f64>,
    /// Estimates whose error exceeds the threshold.
    pub diverged: Vec<bool>,
    /// Non-identity assignment.
    pub swapped: bool,
}

impl TrackOutcome {
    pub fn any_diverged(&self) -> bool {
        self.diverged.iter().any(|d| *d)
    }

    /// Pairs of estimate indices (1-based) whose truths were exchanged.
    pub fn swapped_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, &j) in self.assignment.iter().enumerate() {
            if j > i && self.assignment.get(j) == Some(&i) {
                out.push((i + 1, j + 1));
            }
        }
        out
    }
}

/// Divergence (error strictly above `threshold`) and swap detection at a
/// single time.
pub fn detect_divergence_and_swaps(
    estimates: &[StateVec],
    truth: &[StateVec],
    threshold: f64,
) -> TrackOutcome {
    let assignment = nearest_neighbour_assignment(estimates, truth);
    let errors: Vec<f64> = estimates
        .iter()
        .zip(&assignment)
        .map(|(e, &j)| truth.get(j).map_or(f64::INFINITY, |t| position_error(e, t)))
        .collect();
    let diverged = errors.iter().map(|e| *e > threshold).collect();
    let swapped = assignment.iter().enumerate().any(|(i, &j)| i != j);
    TrackOutcome {
        assignment,
        errors,
        diverged,
        swapped,
    }
}

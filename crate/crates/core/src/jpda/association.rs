//! Association priors, predictive likelihoods, gating and the joint and
//! marginal association posteriors.

use std::f64::consts::PI;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use super::hypothesis::T2MHypothesis;
use crate::error::{Error, Result};
use crate::models::{wrap_angle, RangeBearing, RangeBearingSensor, StateVec};
use crate::particles::log_sum_exp;

/// Detection and clutter model of one observer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssociationModel {
    pub p_detect: f64,
    /// Expected number of clutter measurements per frame.
    pub clutter_rate: f64,
    /// Measurement-space volume over which clutter is uniform.
    pub volume: f64,
}

impl AssociationModel {
    pub fn new(p_detect: f64, clutter_rate: f64, volume: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_detect) {
            return Err(Error::InvalidArgument(format!(
                "detection probability {p_detect} outside [0, 1]"
            )));
        }
        if !(clutter_rate >= 0.0 && clutter_rate.is_finite()) {
            return Err(Error::InvalidArgument(
                "clutter rate must be non-negative".into(),
            ));
        }
        if !(volume > 0.0 && volume.is_finite()) {
            return Err(Error::InvalidArgument(
                "measurement volume must be positive".into(),
            ));
        }
        Ok(Self {
            p_detect,
            clutter_rate,
            volume,
        })
    }

    /// Clutter uniform over ranges `[0, r_max]` and all bearings: `V = 2 pi r_max`.
    pub fn with_max_range(p_detect: f64, clutter_rate: f64, r_max: f64) -> Result<Self> {
        Self::new(p_detect, clutter_rate, 2.0 * PI * r_max)
    }
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|i| (i as f64).ln()).sum()
}

/// `log Poisson(n; lambda)`.
pub fn poisson_log_pmf(n: usize, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    n as f64 * lambda.ln() - lambda - ln_factorial(n)
}

/// Unnormalized log-prior of a hypothesis in sequential form:
/// `p(M_C) * prod_k f_k`, where `f_k` is `1 - P_D` for an undetected target,
/// 0 for a measurement already taken by an earlier target, and `P_D / M_k`
/// otherwise, `M_k` being the number of measurements not yet assigned to
/// targets `1..k-1`.
pub fn association_prior(h: &T2MHypothesis, model: &AssociationModel) -> f64 {
    let m = h.measurements;
    let mut lp = poisson_log_pmf(h.m_clutter(), model.clutter_rate);
    let mut used = vec![false; m + 1];
    let mut assigned = 0;
    for &j in &h.r_tilde {
        if j == 0 {
            lp += (1.0 - model.p_detect).ln();
        } else if j > m || used[j] {
            return f64::NEG_INFINITY;
        } else {
            lp += (model.p_detect / (m - assigned) as f64).ln();
            used[j] = true;
            assigned += 1;
        }
    }
    lp
}

/// Predictive weights `alpha` from normalized previous log-weights. With the
/// transitional prior as proposal they are the previous weights themselves;
/// `log_correction[n] = log p(x_n | x'_n) - log q(x_n | x'_n, y)` covers the
/// general case.
pub fn predictive_log_weights(
    prev_log_w: &[f64],
    log_correction: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let mut a: Vec<f64> = match log_correction {
        None => prev_log_w.to_vec(),
        Some(c) => {
            if c.len() != prev_log_w.len() {
                return Err(Error::InvalidArgument(
                    "one correction per particle required".into(),
                ));
            }
            prev_log_w.iter().zip(c).map(|(w, d)| w + d).collect()
        }
    };
    crate::particles::normalize_log_weights(&mut a)?;
    Ok(a)
}

/// `log sum_n alpha_n p_T(z | x_n)`.
pub fn predictive_log_likelihood(
    states: &[StateVec],
    log_alpha: &[f64],
    z: &RangeBearing,
    sensor: &RangeBearingSensor,
) -> f64 {
    let terms: Vec<f64> = states
        .iter()
        .zip(log_alpha)
        .map(|(x, a)| a + sensor.log_likelihood(z, x))
        .collect();
    log_sum_exp(&terms)
}

pub fn predictive_likelihood(
    states: &[StateVec],
    log_alpha: &[f64],
    z: &RangeBearing,
    sensor: &RangeBearingSensor,
) -> f64 {
    predictive_log_likelihood(states, log_alpha, z, sensor).exp()
}

/// Moment-matched Gaussian of the predicted measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictiveMeasurementGaussian {
    pub mean: RangeBearing,
    pub cov: Matrix2<f64>,
}

/// Mean `sum alpha h(x)` (bearing as a circular mean) and covariance
/// `R + sum alpha (h - mean)(h - mean)^T` with wrapped bearing deviations.
pub fn predictive_gaussian(
    states: &[StateVec],
    alpha: &[f64],
    sensor: &RangeBearingSensor,
) -> PredictiveMeasurementGaussian {
    let preds: Vec<RangeBearing> = states.iter().map(|x| sensor.predict(x)).collect();
    let (mut r, mut s, mut c) = (0.0, 0.0, 0.0);
    for (p, a) in preds.iter().zip(alpha) {
        r += a * p.range;
        s += a * p.bearing.sin();
        c += a * p.bearing.cos();
    }
    let theta = s.atan2(c);
    let mut cov = sensor.noise.cov();
    for (p, a) in preds.iter().zip(alpha) {
        let d = nalgebra::Vector2::new(p.range - r, wrap_angle(p.bearing - theta));
        cov += d * d.transpose() * *a;
    }
    PredictiveMeasurementGaussian {
        mean: RangeBearing::new(r, theta),
        cov,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    /// Accept a measurement when its squared Mahalanobis distance is below this.
    pub chi2_threshold: f64,
}

impl GateParams {
    pub fn new(chi2_threshold: f64) -> Result<Self> {
        if !(chi2_threshold > 0.0) {
            return Err(Error::InvalidArgument(
                "gate threshold must be positive".into(),
            ));
        }
        Ok(Self { chi2_threshold })
    }

    /// Threshold for significance `alpha` in two dimensions, `-2 ln(alpha)`.
    pub fn from_significance(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(
                "gate significance must lie in (0, 1)".into(),
            ));
        }
        Self::new(-2.0 * alpha.ln())
    }

    pub fn unbounded() -> Self {
        Self {
            chi2_threshold: f64::INFINITY,
        }
    }
}

impl Default for GateParams {
    fn default() -> Self {
        Self {
            chi2_threshold: 9.21,
        }
    }
}

/// Squared Mahalanobis distances of every measurement and the (1-based)
/// indices with distance below the threshold.
pub fn gate(
    pred: &PredictiveMeasurementGaussian,
    measurements: &[RangeBearing],
    params: &GateParams,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let inv = pred
        .cov
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()) && pred.cov.determinant() > 0.0)
        .ok_or_else(|| Error::Numeric("predicted measurement covariance is singular".into()))?;
    let mut d2 = Vec::with_capacity(measurements.len());
    let mut valid = Vec::new();
    for (j, z) in measurements.iter().enumerate() {
        let e = nalgebra::Vector2::new(
            z.range - pred.mean.range,
            wrap_angle(z.bearing - pred.mean.bearing),
        );
        let d = (e.transpose() * inv * e)[(0, 0)];
        if d < params.chi2_threshold {
            valid.push(j + 1);
        }
        d2.push(d);
    }
    Ok((valid, d2))
}

/// Normalized joint posterior of each hypothesis,
/// `p(h) V^(-M_C) prod_{k detected} p_k(y_{r_k})`.
///
/// `log_pred[k][j]` is the log predictive likelihood of measurement `j + 1`
/// under target `k`.
pub fn joint_posterior(
    hyps: &[T2MHypothesis],
    log_priors: &[f64],
    log_pred: &[Vec<f64>],
    model: &AssociationModel,
    observer: usize,
) -> Result<Vec<f64>> {
    if hyps.is_empty() || hyps.len() != log_priors.len() {
        return Err(Error::InvalidArgument(
            "one prior per hypothesis required".into(),
        ));
    }
    let log_v = model.volume.ln();
    let mut lp: Vec<f64> = hyps
        .iter()
        .zip(log_priors)
        .map(|(h, p)| {
            let mut v = p - h.m_clutter() as f64 * log_v;
            for (k, &j) in h.r_tilde.iter().enumerate() {
                if j != 0 {
                    v += log_pred[k][j - 1];
                }
            }
            v
        })
        .collect();
    let total = log_sum_exp(&lp);
    if !total.is_finite() {
        return Err(Error::DegenerateAssociation(observer));
    }
    for v in lp.iter_mut() {
        *v = (*v - total).exp();
    }
    Ok(lp)
}

/// Marginal association probabilities `beta[j][k]`, `j = 0..=M` (row 0:
/// target undetected).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaMatrix {
    pub measurements: usize,
    pub targets: usize,
    data: Vec<f64>,
}

impl BetaMatrix {
    pub fn zeros(measurements: usize, targets: usize) -> Self {
        Self {
            measurements,
            targets,
            data: vec![0.0; (measurements + 1) * targets],
        }
    }

    /// Every target undetected with certainty.
    pub fn all_clutter(measurements: usize, targets: usize) -> Self {
        let mut b = Self::zeros(measurements, targets);
        for k in 0..targets {
            *b.get_mut(0, k) = 1.0;
        }
        b
    }

    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.data[j * self.targets + k]
    }

    pub fn get_mut(&mut self, j: usize, k: usize) -> &mut f64 {
        &mut self.data[j * self.targets + k]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..=self.measurements).map(|j| self.get(j, k)).collect()
    }
}

pub fn marginal_beta(
    hyps: &[T2MHypothesis],
    posterior: &[f64],
    targets: usize,
    measurements: usize,
) -> BetaMatrix {
    let mut b = BetaMatrix::zeros(measurements, targets);
    for (h, p) in hyps.iter().zip(posterior) {
        for (k, &j) in h.r_tilde.iter().enumerate() {
            *b.get_mut(j, k) += p;
        }
    }
    b
}

/// `log(beta_0 + sum_j beta_j p_T(y_j | x))` for one observer, given the
/// target's beta column and `log p_T(y_j | x)` for each measurement.
pub fn mixture_log_likelihood(beta_column: &[f64], meas_log_lik: &[f64]) -> f64 {
    let mut terms = Vec::with_capacity(beta_column.len());
    terms.push(beta_column[0].ln());
    for (b, ll) in beta_column[1..].iter().zip(meas_log_lik) {
        terms.push(b.ln() + ll);
    }
    log_sum_exp(&terms)
}

/// Product over observers of the per-observer mixtures, in the log domain.
pub fn target_log_likelihood(columns: &[Vec<f64>], meas_log_lik: &[Vec<f64>]) -> f64 {
    columns
        .iter()
        .zip(meas_log_lik)
        .map(|(b, l)| mixture_log_likelihood(b, l))
        .sum()
}

/// Hypotheses, priors, posterior and marginals for one observer, given
/// log predictive likelihoods and validation sets.
pub fn association_betas(
    log_pred: &[Vec<f64>],
    validated: &[Vec<usize>],
    measurements: usize,
    model: &AssociationModel,
    observer: usize,
) -> Result<BetaMatrix> {
    let k = log_pred.len();
    let hyps = super::hypothesis::enumerate_hypotheses(k, measurements, validated)?;
    let priors: Vec<f64> = hyps.iter().map(|h| association_prior(h, model)).collect();
    let post = joint_posterior(&hyps, &priors, log_pred, model, observer)?;
    Ok(marginal_beta(&hyps, &post, k, measurements))
}

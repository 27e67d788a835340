//! Weighted particle sets and the resampling toolbox.
//!
//! Weights are stored as natural logarithms. Index-returning samplers use
//! 0-based indices.

use nalgebra::{DMatrix, DVector, Matrix4, SVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::StateVec;

/// `log(sum(exp(v)))`, returning `-inf` for an empty or all `-inf` slice.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max.is_infinite() || max.is_nan() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Shifts log-weights so their exponentials sum to one.
///
/// The slice is left untouched on error.
pub fn normalize_log_weights(log_w: &mut [f64]) -> Result<()> {
    if log_w.is_empty() {
        return Err(Error::InvalidArgument("empty weight vector".into()));
    }
    if log_w.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
        return Err(Error::DegenerateWeights(
            "weights contain NaN or +inf".into(),
        ));
    }
    let lse = log_sum_exp(log_w);
    if lse == f64::NEG_INFINITY {
        return Err(Error::DegenerateWeights("all weights are zero".into()));
    }
    for w in log_w.iter_mut() {
        *w -= lse;
    }
    Ok(())
}

/// Linear-domain weights; `log_w` is assumed normalized.
pub fn linear_weights(log_w: &[f64]) -> Vec<f64> {
    log_w.iter().map(|w| w.exp()).collect()
}

const NORMALIZED_TOL: f64 = 1e-8;

fn check_normalized(w: &[f64]) -> Result<()> {
    let s: f64 = w.iter().sum();
    if w.is_empty() || (s - 1.0).abs() > NORMALIZED_TOL || w.iter().any(|x| *x < 0.0 || x.is_nan())
    {
        return Err(Error::InvalidArgument(format!(
            "weights must be normalized (sum = {s})"
        )));
    }
    Ok(())
}

/// `1 / sum(w^2)` for normalized linear weights.
pub fn effective_sample_size(w: &[f64]) -> Result<f64> {
    check_normalized(w)?;
    Ok(1.0 / w.iter().map(|x| x * x).sum::<f64>())
}

/// Effective sample size from normalized log-weights.
pub fn effective_sample_size_log(log_w: &[f64]) -> Result<f64> {
    effective_sample_size(&linear_weights(log_w))
}

/// An ordered set of weighted samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet<S> {
    pub states: Vec<S>,
    pub log_weights: Vec<f64>,
}

impl<S> ParticleSet<S> {
    pub fn new(states: Vec<S>, log_weights: Vec<f64>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidArgument(
                "particle set must be non-empty".into(),
            ));
        }
        if states.len() != log_weights.len() {
            return Err(Error::InvalidArgument(format!(
                "{} states but {} weights",
                states.len(),
                log_weights.len()
            )));
        }
        Ok(Self {
            states,
            log_weights,
        })
    }

    pub fn uniform(states: Vec<S>) -> Result<Self> {
        let n = states.len();
        Self::new(states, vec![-(n as f64).ln(); n])
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn normalize(&mut self) -> Result<()> {
        normalize_log_weights(&mut self.log_weights)
    }

    pub fn weights(&self) -> Vec<f64> {
        linear_weights(&self.log_weights)
    }

    pub fn ess(&self) -> Result<f64> {
        effective_sample_size_log(&self.log_weights)
    }

    pub fn set_uniform_weights(&mut self) {
        let n = self.len();
        self.log_weights = vec![-(n as f64).ln(); n];
    }
}

impl<S: Clone> ParticleSet<S> {
    /// Picks states by index and assigns uniform weights.
    pub fn select(&self, indices: &[usize]) -> Self {
        let states: Vec<S> = indices.iter().map(|&i| self.states[i].clone()).collect();
        let n = states.len();
        Self {
            states,
            log_weights: vec![-(n as f64).ln(); n],
        }
    }
}

/// Cumulative sum of `w` with the entry at the last positive weight (and
/// everything after it) pinned to exactly 1.
fn cumulative(w: &[f64]) -> Vec<f64> {
    let mut c = Vec::with_capacity(w.len());
    let mut acc = 0.0;
    for x in w {
        acc += x;
        c.push(acc);
    }
    if let Some(last) = w.iter().rposition(|x| *x > 0.0) {
        for v in &mut c[last..] {
            *v = 1.0;
        }
    }
    c
}

/// First index `m` with `c[m] >= u`.
fn inverse_cdf(c: &[f64], u: f64) -> usize {
    c.partition_point(|x| *x < u).min(c.len() - 1)
}

fn check_positive_mass(w: &[f64]) -> Result<()> {
    check_normalized(w).map_err(|e| Error::DegenerateWeights(e.to_string()))
}

/// `n` independent draws from the categorical distribution `w`.
pub fn multinomial_indices<R: Rng + ?Sized>(
    w: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    check_positive_mass(w)?;
    let c = cumulative(w);
    Ok((0..n)
        .map(|_| {
            // (0, 1] so that a leading zero weight can never be hit at u = 0
            let u = 1.0 - rng.random::<f64>();
            inverse_cdf(&c, u)
        })
        .collect())
}

/// Systematic draws: one `u1 ~ U[0, 1/n)` and offsets `u1 + i/n`.
pub fn systematic_indices<R: Rng + ?Sized>(w: &[f64], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    check_positive_mass(w)?;
    let u1 = rng.random::<f64>() / n as f64;
    Ok(stratified_walk(w, u1, n))
}

fn stratified_walk(w: &[f64], u1: f64, n: usize) -> Vec<usize> {
    let c = cumulative(w);
    let mut out = Vec::with_capacity(n);
    let mut m = 0;
    let last = c.len() - 1;
    for i in 0..n {
        let u = u1 + i as f64 / n as f64;
        while m < last && (c[m] < u || w[m] == 0.0) {
            m += 1;
        }
        out.push(m);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResampleScheme {
    Multinomial,
    #[default]
    Systematic,
}

pub fn resample_indices<R: Rng + ?Sized>(
    scheme: ResampleScheme,
    w: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    match scheme {
        ResampleScheme::Multinomial => multinomial_indices(w, n, rng),
        ResampleScheme::Systematic => systematic_indices(w, n, rng),
    }
}

pub fn multinomial_resample<S: Clone, R: Rng + ?Sized>(
    ps: &ParticleSet<S>,
    rng: &mut R,
) -> Result<ParticleSet<S>> {
    let idx = multinomial_indices(&ps.weights(), ps.len(), rng)?;
    Ok(ps.select(&idx))
}

pub fn systematic_resample<S: Clone, R: Rng + ?Sized>(
    ps: &ParticleSet<S>,
    rng: &mut R,
) -> Result<ParticleSet<S>> {
    let idx = systematic_indices(&ps.weights(), ps.len(), rng)?;
    Ok(ps.select(&idx))
}

pub fn resample<S: Clone, R: Rng + ?Sized>(
    scheme: ResampleScheme,
    ps: &ParticleSet<S>,
    rng: &mut R,
) -> Result<ParticleSet<S>> {
    match scheme {
        ResampleScheme::Multinomial => multinomial_resample(ps, rng),
        ResampleScheme::Systematic => systematic_resample(ps, rng),
    }
}

/// A normalized probability vector used to pick particle indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondaryWeights {
    rho: Vec<f64>,
}

impl SecondaryWeights {
    /// From strictly positive weighting-function values `g`.
    pub fn from_values(g: &[f64]) -> Result<Self> {
        if g.is_empty() {
            return Err(Error::InvalidArgument("empty weighting function".into()));
        }
        if let Some(bad) = g.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "weighting function values must be strictly positive, got {bad}"
            )));
        }
        let total: f64 = g.iter().sum();
        Ok(Self {
            rho: g.iter().map(|v| v / total).collect(),
        })
    }

    /// From `log g`; exponentiation happens after subtracting the maximum,
    /// so very small likelihoods do not underflow.
    pub fn from_log_values(log_g: &[f64]) -> Result<Self> {
        if log_g.is_empty() {
            return Err(Error::InvalidArgument("empty weighting function".into()));
        }
        if log_g.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateWeights(
                "weighting function has zero or non-finite values".into(),
            ));
        }
        let mut lw = log_g.to_vec();
        normalize_log_weights(&mut lw)?;
        Ok(Self {
            rho: linear_weights(&lw),
        })
    }

    /// From an existing probability vector.
    pub fn from_probabilities(rho: Vec<f64>) -> Result<Self> {
        if rho.is_empty() || rho.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "probabilities must be non-negative".into(),
            ));
        }
        let s: f64 = rho.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("probabilities sum to {s}")));
        }
        Ok(Self { rho })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.rho
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }
}

/// Independent categorical draws by a fresh uniform and a linear cumulative
/// scan per draw; O(N R).
pub fn sample_indices_scan<R: Rng + ?Sized>(
    rho: &SecondaryWeights,
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be at least 1".into(),
        ));
    }
    let p = rho.as_slice();
    let last = p.len() - 1;
    Ok((0..count)
        .map(|_| {
            let u = 1.0 - rng.random::<f64>();
            let mut m = 0;
            let mut c = p[0];
            while c < u && m < last {
                m += 1;
                c += p[m];
            }
            // float round-off can leave c just below 1; never land on a zero-mass tail
            while p[m] == 0.0 && m > 0 {
                m -= 1;
            }
            m
        })
        .collect())
}

/// Stratified draws `u1 + i/R` with `u1 ~ U[0, 1/R)`; O(N + R).
pub fn sample_indices_stratified<R: Rng + ?Sized>(
    rho: &SecondaryWeights,
    count: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if count == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be at least 1".into(),
        ));
    }
    let u1 = rng.random::<f64>() / count as f64;
    Ok(stratified_walk(rho.as_slice(), u1, count))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IndexSampler {
    Scan,
    #[default]
    Stratified,
}

impl IndexSampler {
    pub fn sample<R: Rng + ?Sized>(
        &self,
        rho: &SecondaryWeights,
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        match self {
            IndexSampler::Scan => sample_indices_scan(rho, count, rng),
            IndexSampler::Stratified => sample_indices_stratified(rho, count, rng),
        }
    }
}

/// How `K * M * N^(-1/d)` is read when drawing roughening noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RougheningScale {
    #[default]
    Variance,
    StdDev,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougheningParams {
    pub tuning_k: f64,
    #[serde(default)]
    pub scale: RougheningScale,
}

impl RougheningParams {
    pub fn new(tuning_k: f64) -> Result<Self> {
        if !(tuning_k >= 0.0 && tuning_k.is_finite()) {
            return Err(Error::InvalidArgument(
                "roughening constant must be non-negative".into(),
            ));
        }
        Ok(Self {
            tuning_k,
            scale: RougheningScale::Variance,
        })
    }

    pub fn off() -> Self {
        Self {
            tuning_k: 0.0,
            scale: RougheningScale::Variance,
        }
    }

    /// Standard deviation of the jitter for a component with spread `spread`.
    pub fn noise_std(&self, spread: f64, n: usize, dim: usize) -> f64 {
        let s = self.tuning_k * spread * (n as f64).powf(-1.0 / dim as f64);
        match self.scale {
            RougheningScale::Variance => s.sqrt(),
            RougheningScale::StdDev => s,
        }
    }
}

impl Default for RougheningParams {
    fn default() -> Self {
        Self {
            tuning_k: 0.2,
            scale: RougheningScale::Variance,
        }
    }
}

/// Continuous coordinates of a particle, used by roughening and moments.
pub trait Components {
    fn dim(&self) -> usize;
    fn component(&self, i: usize) -> f64;
    fn perturb(&mut self, i: usize, delta: f64);
}

impl<const D: usize> Components for SVector<f64, D> {
    fn dim(&self) -> usize {
        D
    }
    fn component(&self, i: usize) -> f64 {
        self[i]
    }
    fn perturb(&mut self, i: usize, delta: f64) {
        self[i] += delta;
    }
}

impl Components for f64 {
    fn dim(&self) -> usize {
        1
    }
    fn component(&self, _i: usize) -> f64 {
        *self
    }
    fn perturb(&mut self, _i: usize, delta: f64) {
        *self += delta;
    }
}

/// Adds independent zero-mean Gaussian jitter to every component, scaled by
/// the component's spread `max - min` across the set. Sets of fewer than two
/// particles are returned unchanged.
pub fn roughen_states<S: Components, R: Rng + ?Sized>(
    states: &mut [S],
    params: &RougheningParams,
    rng: &mut R,
) {
    let n = states.len();
    if n < 2 || params.tuning_k == 0.0 {
        return;
    }
    let d = states[0].dim();
    let stds: Vec<f64> = (0..d)
        .map(|m| {
            let (lo, hi) = states
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                    let v = s.component(m);
                    (lo.min(v), hi.max(v))
                });
            params.noise_std(hi - lo, n, d)
        })
        .collect();
    for s in states.iter_mut() {
        for (m, std) in stds.iter().enumerate() {
            if *std > 0.0 {
                let e: f64 = rng.sample(StandardNormal);
                s.perturb(m, std * e);
            }
        }
    }
}

pub fn roughen<S: Components + Clone, R: Rng + ?Sized>(
    ps: &ParticleSet<S>,
    params: &RougheningParams,
    rng: &mut R,
) -> ParticleSet<S> {
    let mut out = ps.clone();
    roughen_states(&mut out.states, params, rng);
    out
}

/// Resamples by `rho` (from strictly positive `g`) and reweights each
/// survivor by `w_j / rho_j`, so the weighted set represents the same
/// distribution.
pub fn weighted_resample<S: Clone, R: Rng + ?Sized>(
    ps: &ParticleSet<S>,
    g: &[f64],
    sampler: IndexSampler,
    rng: &mut R,
) -> Result<ParticleSet<S>> {
    if g.len() != ps.len() {
        return Err(Error::InvalidArgument(
            "one weighting value per particle required".into(),
        ));
    }
    let rho = SecondaryWeights::from_values(g)?;
    weighted_resample_with(ps, &rho, sampler, rng)
}

/// As [`weighted_resample`] with the weighting function given as `log g`.
pub fn weighted_resample_log<S: Clone, R: Rng + ?Sized>(
    ps: &ParticleSet<S>,
    log_g: &[f64],
    sampler: IndexSampler,
    rng: &mut R,
) -> Result<ParticleSet<S>> {
    if log_g.len() != ps.len() {
        return Err(Error::InvalidArgument(
            "one weighting value per particle required".into(),
        ));
    }
    let rho = SecondaryWeights::from_log_values(log_g)?;
    weighted_resample_with(ps, &rho, sampler, rng)
}

fn weighted_resample_with<S: Clone, R: Rng + ?Sized>(
    ps: &ParticleSet<S>,
    rho: &SecondaryWeights,
    sampler: IndexSampler,
    rng: &mut R,
) -> Result<ParticleSet<S>> {
    let mut out = weighted_resample_unnormalized(ps, rho, sampler, rng)?;
    out.normalize()?;
    Ok(out)
}

/// The weighted-resampling draw before normalization: survivor `i` carries
/// `w_j / (N rho_j)`, so `sum_i weight_i f(x_i)` is an unbiased estimate of
/// `sum_j w_j f(x_j)`.
pub fn weighted_resample_unnormalized<S: Clone, R: Rng + ?Sized>(
    ps: &ParticleSet<S>,
    rho: &SecondaryWeights,
    sampler: IndexSampler,
    rng: &mut R,
) -> Result<ParticleSet<S>> {
    if rho.len() != ps.len() {
        return Err(Error::InvalidArgument(
            "one weighting value per particle required".into(),
        ));
    }
    let n = ps.len();
    let idx = sampler.sample(rho, n, rng)?;
    let p = rho.as_slice();
    let log_n = (n as f64).ln();
    Ok(ParticleSet {
        states: idx.iter().map(|&j| ps.states[j].clone()).collect(),
        log_weights: idx
            .iter()
            .map(|&j| ps.log_weights[j] - p[j].ln() - log_n)
            .collect(),
    })
}

/// Weighted mean and covariance over all components.
pub fn weighted_mean_cov<S: Components>(ps: &ParticleSet<S>) -> (DVector<f64>, DMatrix<f64>) {
    let w = ps.weights();
    let d = ps.states[0].dim();
    let mut mean = DVector::zeros(d);
    for (s, wi) in ps.states.iter().zip(&w) {
        for m in 0..d {
            mean[m] += wi * s.component(m);
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for (s, wi) in ps.states.iter().zip(&w) {
        let e = DVector::from_fn(d, |m, _| s.component(m) - mean[m]);
        cov += &e * e.transpose() * *wi;
    }
    (mean, cov)
}

/// Weighted mean and covariance of planar states given normalized log-weights.
pub fn state_mean_cov(states: &[StateVec], log_w: &[f64]) -> (StateVec, Matrix4<f64>) {
    state_mean_cov_by(states.iter(), log_w)
}

pub(crate) fn state_mean_cov_by<'a>(
    states: impl Iterator<Item = &'a StateVec> + Clone,
    log_w: &[f64],
) -> (StateVec, Matrix4<f64>) {
    let mut mean = StateVec::zeros();
    for (s, lw) in states.clone().zip(log_w) {
        mean += s * lw.exp();
    }
    let mut cov = Matrix4::zeros();
    for (s, lw) in states.zip(log_w) {
        let e = s - mean;
        cov += e * e.transpose() * lw.exp();
    }
    (mean, (cov + cov.transpose()) * 0.5)
}

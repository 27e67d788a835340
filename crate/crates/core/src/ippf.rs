//! Independent partition particle filter for several targets with known
//! association, plus the joint-state bootstrap filter it is compared against.
//!
//! Each joint particle holds one state per target. Partitions are proposed
//! independently, resampled per partition by their own likelihood, and the
//! crossed-over joint particles are reweighted so the represented posterior
//! is unchanged.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{
    reweight_and_resample, Dynamics, FilterConfig, GaussianBelief, MeasurementModel,
    ResamplePolicy, Update,
};
use crate::models::StateVec;
use crate::particles::{
    normalize_log_weights, state_mean_cov_by, Components, IndexSampler, ParticleSet,
    SecondaryWeights,
};

/// One state per target.
#[derive(Debug, Clone, PartialEq)]
pub struct JointParticle(pub Vec<StateVec>);

impl JointParticle {
    pub fn targets(&self) -> usize {
        self.0.len()
    }
}

impl Components for JointParticle {
    fn dim(&self) -> usize {
        4 * self.0.len()
    }
    fn component(&self, i: usize) -> f64 {
        self.0[i / 4][i % 4]
    }
    fn perturb(&mut self, i: usize, delta: f64) {
        self.0[i / 4][i % 4] += delta;
    }
}

pub type PartitionedSet = ParticleSet<JointParticle>;

/// Draws `n` joint particles from independent Gaussian priors.
pub fn partitioned_from_beliefs<R: Rng + ?Sized>(
    priors: &[GaussianBelief],
    n: usize,
    rng: &mut R,
) -> Result<PartitionedSet> {
    if priors.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one target is required".into(),
        ));
    }
    let per: Vec<ParticleSet<StateVec>> = priors
        .iter()
        .map(|p| p.sample_particles(n, rng))
        .collect::<Result<_>>()?;
    let states = (0..n)
        .map(|i| JointParticle(per.iter().map(|s| s.states[i]).collect()))
        .collect();
    ParticleSet::uniform(states)
}

/// Per-target weighted mean and covariance.
pub fn partition_estimates(particles: &[JointParticle], log_w: &[f64]) -> Vec<GaussianBelief> {
    let k = particles.first().map_or(0, |p| p.targets());
    (0..k)
        .map(|t| {
            let (mean, cov) = state_mean_cov_by(particles.iter().map(|p| &p.0[t]), log_w);
            GaussianBelief { mean, cov }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IppfConfig {
    pub filter: FilterConfig,
    pub sampler: IndexSampler,
    /// Resample after every step instead of only when the effective sample
    /// size drops below the threshold.
    pub always_resample: bool,
}

impl IppfConfig {
    pub fn new(filter: FilterConfig) -> Self {
        Self {
            filter,
            sampler: IndexSampler::Stratified,
            always_resample: false,
        }
    }

    fn policy(&self) -> ResamplePolicy {
        if self.always_resample {
            ResamplePolicy::Always
        } else {
            ResamplePolicy::BelowThreshold(self.filter.n_thr)
        }
    }
}

/// `K` independent index maps of length `n`, map `k` drawn from `rho[k]`.
pub fn crossover_indices<R: Rng + ?Sized>(
    rho: &[SecondaryWeights],
    n: usize,
    sampler: IndexSampler,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    rho.iter().map(|r| sampler.sample(r, n, rng)).collect()
}

/// Intermediate quantities of one IPPF weighting pass, kept for auditing.
#[derive(Debug, Clone, PartialEq)]
pub struct IppfDraw {
    pub particles: Vec<JointParticle>,
    /// Normalized final log-weights.
    pub log_weights: Vec<f64>,
    /// `index_maps[k][i]`: source particle of partition `k` of output `i`.
    pub index_maps: Vec<Vec<usize>>,
    pub rho: Vec<SecondaryWeights>,
    /// `sum_k log w_{t-1}^(j_k(i))`.
    pub pre_crossover_log_w: Vec<f64>,
    /// `log p(z | x^(i))` of the recombined particle.
    pub log_likelihood: Vec<f64>,
    /// Normalizing constant subtracted from the unnormalized log-weights.
    pub log_normalizer: f64,
}

/// Propose, weight per partition, cross over and reweight.
///
/// `z[k]` is the measurement already associated with target `k`.
pub fn ippf_draw<Z, M, R>(
    set: &PartitionedSet,
    z: &[Z],
    dynamics: &[Dynamics],
    meas: &[M],
    sampler: IndexSampler,
    rng: &mut R,
) -> Result<IppfDraw>
where
    M: MeasurementModel<Z>,
    R: Rng + ?Sized,
{
    let n = set.len();
    let k = set.states[0].targets();
    if z.len() != k || dynamics.len() != k || meas.len() != k {
        return Err(Error::InvalidArgument(format!(
            "{k} targets but {} measurements, {} motion models, {} sensors",
            z.len(),
            dynamics.len(),
            meas.len()
        )));
    }
    let mut proposed: Vec<Vec<StateVec>> = Vec::with_capacity(k);
    let mut log_g: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut rho = Vec::with_capacity(k);
    for t in 0..k {
        let xs: Vec<StateVec> = set
            .states
            .iter()
            .map(|p| dynamics[t].sample(&p.0[t], rng))
            .collect();
        let lg: Vec<f64> = xs
            .iter()
            .map(|x| meas[t].log_likelihood(&z[t], x))
            .collect();
        rho.push(
            SecondaryWeights::from_log_values(&lg).map_err(|_| Error::DegeneratePartition(t))?,
        );
        proposed.push(xs);
        log_g.push(lg);
    }
    let index_maps = crossover_indices(&rho, n, sampler, rng)?;

    let mut particles = Vec::with_capacity(n);
    let mut pre = Vec::with_capacity(n);
    let mut lik = Vec::with_capacity(n);
    let mut log_w = Vec::with_capacity(n);
    for i in 0..n {
        let mut states = Vec::with_capacity(k);
        let (mut prior, mut ll, mut lr) = (0.0, 0.0, 0.0);
        for t in 0..k {
            let j = index_maps[t][i];
            states.push(proposed[t][j]);
            prior += set.log_weights[j];
            ll += log_g[t][j];
            lr += rho[t].as_slice()[j].ln();
        }
        particles.push(JointParticle(states));
        pre.push(prior);
        lik.push(ll);
        log_w.push(prior + ll - lr);
    }
    let unnormalized = log_w.clone();
    normalize_log_weights(&mut log_w)?;
    let log_normalizer = unnormalized[0] - log_w[0];
    Ok(IppfDraw {
        particles,
        log_weights: log_w,
        index_maps,
        rho,
        pre_crossover_log_w: pre,
        log_likelihood: lik,
        log_normalizer,
    })
}

/// One IPPF step; the estimate holds one belief per target.
pub fn ippf_step<Z, M, R>(
    set: &PartitionedSet,
    z: &[Z],
    dynamics: &[Dynamics],
    meas: &[M],
    cfg: &IppfConfig,
    rng: &mut R,
) -> Result<Update<JointParticle, Vec<GaussianBelief>>>
where
    M: MeasurementModel<Z>,
    R: Rng + ?Sized,
{
    let draw = ippf_draw(set, z, dynamics, meas, cfg.sampler, rng)?;
    let zeros = vec![0.0; draw.particles.len()];
    reweight_and_resample(
        draw.particles,
        &draw.log_weights,
        &zeros,
        cfg.policy(),
        cfg.filter.resample_scheme,
        &cfg.filter.roughening,
        partition_estimates,
        rng,
    )
}

/// Bootstrap filter on the stacked joint state: all partitions propagated
/// together, weighted by the product of per-target likelihoods, resampled
/// every step.
pub fn joint_bootstrap_step<Z, M, R>(
    set: &PartitionedSet,
    z: &[Z],
    dynamics: &[Dynamics],
    meas: &[M],
    cfg: &FilterConfig,
    rng: &mut R,
) -> Result<Update<JointParticle, Vec<GaussianBelief>>>
where
    M: MeasurementModel<Z>,
    R: Rng + ?Sized,
{
    let k = set.states[0].targets();
    if z.len() != k || dynamics.len() != k || meas.len() != k {
        return Err(Error::InvalidArgument(
            "one measurement, motion model and sensor per target".into(),
        ));
    }
    let predicted: Vec<JointParticle> = set
        .states
        .iter()
        .map(|p| {
            JointParticle(
                p.0.iter()
                    .zip(dynamics)
                    .map(|(x, d)| d.sample(x, rng))
                    .collect(),
            )
        })
        .collect();
    let incr: Vec<f64> = predicted
        .iter()
        .map(|p| (0..k).map(|t| meas[t].log_likelihood(&z[t], &p.0[t])).sum())
        .collect();
    reweight_and_resample(
        predicted,
        &set.log_weights,
        &incr,
        ResamplePolicy::Always,
        cfg.resample_scheme,
        &cfg.roughening,
        partition_estimates,
        rng,
    )
}

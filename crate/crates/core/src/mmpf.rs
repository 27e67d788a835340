//! Multiple model particle filter: each particle carries a discrete regime
//! that selects its motion model and evolves as a Markov chain.

use rand::Rng;

use crate::error::{Error, Result};
use crate::filters::{
    belief_from_particles, reweight_and_resample, Dynamics, FilterConfig, GaussianBelief,
    MeasurementModel, ResamplePolicy, Update,
};
use crate::models::StateVec;
use crate::particles::{normalize_log_weights, state_mean_cov_by, Components, ParticleSet};

/// Row-stochastic regime transition matrix; entry `(i, j)` is the probability
/// of moving from regime `i` to regime `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeTransitionMatrix {
    rows: Vec<Vec<f64>>,
}

impl ModeTransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let s = rows.len();
        if s == 0 {
            return Err(Error::InvalidArgument(
                "transition matrix must have at least one regime".into(),
            ));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != s {
                return Err(Error::InvalidArgument(format!(
                    "row {i} has {} entries, expected {s}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
                return Err(Error::InvalidArgument(format!(
                    "row {i} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!("row {i} sums to {sum}")));
            }
        }
        Ok(Self { rows })
    }

    pub fn identity(s: usize) -> Result<Self> {
        Self::new(
            (0..s)
                .map(|i| (0..s).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
        )
    }

    /// `stay` on the diagonal, the rest spread evenly.
    pub fn symmetric(s: usize, stay: f64) -> Result<Self> {
        if s == 1 {
            return Self::identity(1);
        }
        let off = (1.0 - stay) / (s - 1) as f64;
        Self::new(
            (0..s)
                .map(|i| (0..s).map(|j| if i == j { stay } else { off }).collect())
                .collect(),
        )
    }

    pub fn regimes(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }
}

/// Draws the next regime from `row`. A row with a unit entry is
/// deterministic and consumes no randomness.
fn next_regime<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    if let Some(j) = row.iter().position(|p| *p == 1.0) {
        return j;
    }
    let u = 1.0 - rng.random::<f64>();
    let last = row.iter().rposition(|p| *p > 0.0).unwrap_or(0);
    let mut c = 0.0;
    for (j, p) in row.iter().enumerate().take(last) {
        c += p;
        if *p > 0.0 && c >= u {
            return j;
        }
    }
    last
}

/// Moves every label one step along the Markov chain.
pub fn regime_transition<R: Rng + ?Sized>(
    regimes: &[usize],
    pi: &ModeTransitionMatrix,
    rng: &mut R,
) -> Vec<usize> {
    regimes
        .iter()
        .map(|&i| next_regime(pi.row(i), rng))
        .collect()
}

/// Splits `n` particles between regimes: `floor(n p_i)` each, with the
/// remainder drawn at random from `probs`.
pub fn initial_regimes<R: Rng + ?Sized>(
    n: usize,
    probs: &[f64],
    rng: &mut R,
) -> Result<Vec<usize>> {
    let sum: f64 = probs.iter().sum();
    if probs.is_empty() || probs.iter().any(|p| *p < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(
            "initial mode probabilities must form a distribution".into(),
        ));
    }
    let mut out = Vec::with_capacity(n);
    for (i, p) in probs.iter().enumerate() {
        let c = (n as f64 * p).floor() as usize;
        out.extend(std::iter::repeat_n(i, c.min(n - out.len())));
    }
    while out.len() < n {
        out.push(next_regime(probs, rng));
    }
    Ok(out)
}

/// A state with the regime (0-based) that propagates it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedState {
    pub state: StateVec,
    pub regime: usize,
}

/// Only the continuous state is exposed; roughening never touches the regime.
impl Components for AugmentedState {
    fn dim(&self) -> usize {
        4
    }
    fn component(&self, i: usize) -> f64 {
        self.state[i]
    }
    fn perturb(&mut self, i: usize, delta: f64) {
        self.state[i] += delta;
    }
}

pub type AugmentedParticleSet = ParticleSet<AugmentedState>;

pub fn augmented_from_belief<R: Rng + ?Sized>(
    prior: &GaussianBelief,
    n: usize,
    mode_probs: &[f64],
    rng: &mut R,
) -> Result<AugmentedParticleSet> {
    let states = prior.sample_particles(n, rng)?.states;
    let regimes = initial_regimes(n, mode_probs, rng)?;
    ParticleSet::uniform(
        states
            .into_iter()
            .zip(regimes)
            .map(|(state, regime)| AugmentedState { state, regime })
            .collect(),
    )
}

/// Weighted share of each regime.
pub fn mode_probabilities(states: &[AugmentedState], log_w: &[f64], regimes: usize) -> Vec<f64> {
    let mut p = vec![0.0; regimes];
    for (s, lw) in states.iter().zip(log_w) {
        p[s.regime] += lw.exp();
    }
    let total: f64 = p.iter().sum();
    if total > 0.0 {
        p.iter_mut().for_each(|v| *v /= total);
    }
    p
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmpfEstimate {
    pub belief: GaussianBelief,
    pub mode_probs: Vec<f64>,
}

pub fn mmpf_estimate(states: &[AugmentedState], log_w: &[f64], regimes: usize) -> MmpfEstimate {
    let (mean, cov) = state_mean_cov_by(states.iter().map(|s| &s.state), log_w);
    MmpfEstimate {
        belief: GaussianBelief { mean, cov },
        mode_probs: mode_probabilities(states, log_w, regimes),
    }
}

fn check_models(models: &[Dynamics], states: &[AugmentedState]) -> Result<()> {
    if let Some(bad) = states.iter().find(|s| s.regime >= models.len()) {
        return Err(Error::InvalidArgument(format!(
            "regime {} has no motion model ({} configured)",
            bad.regime,
            models.len()
        )));
    }
    Ok(())
}

fn propagate_and_weigh<Z, M, R>(
    states: &[AugmentedState],
    z: &Z,
    models: &[Dynamics],
    meas: &M,
    rng: &mut R,
) -> (Vec<AugmentedState>, Vec<f64>)
where
    M: MeasurementModel<Z>,
    R: Rng + ?Sized,
{
    let next: Vec<AugmentedState> = states
        .iter()
        .map(|s| AugmentedState {
            state: models[s.regime].sample(&s.state, rng),
            regime: s.regime,
        })
        .collect();
    let incr = next
        .iter()
        .map(|s| meas.log_likelihood(z, &s.state))
        .collect();
    (next, incr)
}

/// Regime-conditioned SIS with the regime's motion model as proposal; the
/// regimes must already have been transitioned for this step.
pub fn rc_sis_step<Z, M, R>(
    aps: &AugmentedParticleSet,
    z: &Z,
    models: &[Dynamics],
    meas: &M,
    rng: &mut R,
) -> Result<AugmentedParticleSet>
where
    M: MeasurementModel<Z>,
    R: Rng + ?Sized,
{
    check_models(models, &aps.states)?;
    let (next, incr) = propagate_and_weigh(&aps.states, z, models, meas, rng);
    let mut log_w: Vec<f64> = aps
        .log_weights
        .iter()
        .zip(&incr)
        .map(|(w, d)| w + d)
        .collect();
    normalize_log_weights(&mut log_w)?;
    ParticleSet::new(next, log_w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmpfConfig {
    pub filter: FilterConfig,
    pub policy: ResamplePolicy,
}

impl MmpfConfig {
    pub fn new(filter: FilterConfig) -> Self {
        Self {
            filter,
            policy: ResamplePolicy::BelowThreshold(filter.n_thr),
        }
    }
}

/// Regime transition, regime-conditioned SIS, then resampling (labels travel
/// with their states) and roughening of the continuous part.
pub fn mmpf_step<Z, M, R>(
    aps: &AugmentedParticleSet,
    z: &Z,
    pi: &ModeTransitionMatrix,
    models: &[Dynamics],
    meas: &M,
    cfg: &MmpfConfig,
    rng: &mut R,
) -> Result<Update<AugmentedState, MmpfEstimate>>
where
    M: MeasurementModel<Z>,
    R: Rng + ?Sized,
{
    if models.len() != pi.regimes() {
        return Err(Error::InvalidArgument(format!(
            "{} motion models for {} regimes",
            models.len(),
            pi.regimes()
        )));
    }
    check_models(models, &aps.states)?;
    let regimes: Vec<usize> = aps.states.iter().map(|s| s.regime).collect();
    let moved = regime_transition(&regimes, pi, rng);
    let transitioned: Vec<AugmentedState> = aps
        .states
        .iter()
        .zip(moved)
        .map(|(s, regime)| AugmentedState {
            state: s.state,
            regime,
        })
        .collect();
    let (next, incr) = propagate_and_weigh(&transitioned, z, models, meas, rng);
    let s = pi.regimes();
    reweight_and_resample(
        next,
        &aps.log_weights,
        &incr,
        cfg.policy,
        cfg.filter.resample_scheme,
        &cfg.filter.roughening,
        |st, lw| mmpf_estimate(st, lw, s),
        rng,
    )
}

/// Plain-state belief of an augmented set.
pub fn belief_of(aps: &AugmentedParticleSet) -> GaussianBelief {
    let states: Vec<StateVec> = aps.states.iter().map(|s| s.state).collect();
    belief_from_particles(&states, &aps.log_weights)
}

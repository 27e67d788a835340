//! Monte Carlo JPDA filters: one particle set per target, measurements
//! shared through association probabilities.

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::association::{
    association_betas, gate, mixture_log_likelihood, predictive_gaussian, AssociationModel,
    BetaMatrix, GateParams,
};
use crate::error::{Error, Result};
use crate::filters::{
    belief_from_particles, reweight_and_resample, Dynamics, FilterConfig, GaussianBelief,
    ResamplePolicy, Update,
};
use crate::mmpf::{
    augmented_from_belief, mmpf_estimate, regime_transition, AugmentedState, MmpfEstimate,
    ModeTransitionMatrix,
};
use crate::models::{RangeBearing, RangeBearingSensor, StateVec};
use crate::particles::{linear_weights, log_sum_exp, Components, ParticleSet};

/// Unlabelled measurements of one observer at one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationFrame {
    pub observer: usize,
    pub measurements: Vec<RangeBearing>,
}

/// A sensor together with its detection and clutter model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observer {
    pub sensor: RangeBearingSensor,
    pub association: AssociationModel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JpdaConfig {
    pub filter: FilterConfig,
    pub gate: GateParams,
    pub policy: ResamplePolicy,
}

impl JpdaConfig {
    pub fn new(filter: FilterConfig) -> Self {
        Self {
            filter,
            gate: GateParams::default(),
            policy: ResamplePolicy::BelowThreshold(filter.n_thr),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JpdaUpdate<S, E> {
    pub targets: Vec<Update<S, E>>,
    /// One matrix per frame, in frame order.
    pub betas: Vec<BetaMatrix>,
    /// Observers whose association posterior vanished; every target was
    /// treated as undetected by them.
    pub degenerate_observers: Vec<usize>,
}

/// Independent Gaussian prior draws, one set per target.
pub fn target_sets_from_beliefs<R: Rng + ?Sized>(
    priors: &[GaussianBelief],
    n: usize,
    rng: &mut R,
) -> Result<Vec<ParticleSet<StateVec>>> {
    priors.iter().map(|p| p.sample_particles(n, rng)).collect()
}

pub fn augmented_sets_from_beliefs<R: Rng + ?Sized>(
    priors: &[GaussianBelief],
    n: usize,
    mode_probs: &[f64],
    rng: &mut R,
) -> Result<Vec<ParticleSet<AugmentedState>>> {
    priors
        .iter()
        .map(|p| augmented_from_belief(p, n, mode_probs, rng))
        .collect()
}

/// Association stage shared by both filters. Returns per-target log-weight
/// increments, the beta matrices and the degenerate observers.
fn associate(
    predicted: &[Vec<StateVec>],
    prev_log_w: &[&[f64]],
    frames: &[ObservationFrame],
    observers: &[Observer],
    gate_params: &GateParams,
) -> Result<(Vec<Vec<f64>>, Vec<BetaMatrix>, Vec<usize>)> {
    let k = predicted.len();
    let mut incr: Vec<Vec<f64>> = predicted.iter().map(|p| vec![0.0; p.len()]).collect();
    let mut betas = Vec::with_capacity(frames.len());
    let mut degenerate = Vec::new();
    let alpha: Vec<Vec<f64>> = prev_log_w.iter().map(|w| linear_weights(w)).collect();
    for frame in frames {
        let obs = observers.get(frame.observer).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "frame refers to unknown observer {}",
                frame.observer
            ))
        })?;
        let m = frame.measurements.len();
        // ll[t][n][j]: log p(y_j | x_n) for target t
        let ll: Vec<Vec<Vec<f64>>> = predicted
            .iter()
            .map(|xs| {
                xs.iter()
                    .map(|x| {
                        frame
                            .measurements
                            .iter()
                            .map(|z| obs.sensor.log_likelihood(z, x))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let mut log_pred = Vec::with_capacity(k);
        let mut validated = Vec::with_capacity(k);
        for t in 0..k {
            let lp: Vec<f64> = (0..m)
                .map(|j| {
                    let terms: Vec<f64> = prev_log_w[t]
                        .iter()
                        .zip(&ll[t])
                        .map(|(a, l)| a + l[j])
                        .collect();
                    log_sum_exp(&terms)
                })
                .collect();
            let pred = predictive_gaussian(&predicted[t], &alpha[t], &obs.sensor);
            validated.push(gate(&pred, &frame.measurements, gate_params)?.0);
            log_pred.push(lp);
        }
        let beta = match association_betas(
            &log_pred,
            &validated,
            m,
            &obs.association,
            frame.observer,
        ) {
            Ok(b) => b,
            Err(Error::DegenerateAssociation(i)) => {
                warn!("association posterior vanished for observer {i}; treating all measurements as clutter");
                degenerate.push(i);
                BetaMatrix::all_clutter(m, k)
            }
            Err(e) => return Err(e),
        };
        for t in 0..k {
            let col = beta.column(t);
            for (d, l) in incr[t].iter_mut().zip(&ll[t]) {
                *d += mixture_log_likelihood(&col, l);
            }
        }
        betas.push(beta);
    }
    Ok((incr, betas, degenerate))
}

fn check_targets<S>(sets: &[ParticleSet<S>]) -> Result<()> {
    if sets.is_empty() || sets.iter().any(|s| s.is_empty()) {
        return Err(Error::InvalidArgument(
            "at least one non-empty target set is required".into(),
        ));
    }
    Ok(())
}

fn finish<S, E, R>(
    predicted: Vec<Vec<S>>,
    sets: &[ParticleSet<S>],
    incr: Vec<Vec<f64>>,
    cfg: &JpdaConfig,
    estimator: impl Fn(&[S], &[f64]) -> E,
    rng: &mut R,
) -> Result<Vec<Update<S, E>>>
where
    S: Clone + Components,
    R: Rng + ?Sized,
{
    predicted
        .into_iter()
        .zip(sets)
        .zip(incr)
        .map(|((p, s), d)| {
            reweight_and_resample(
                p,
                &s.log_weights,
                &d,
                cfg.policy,
                cfg.filter.resample_scheme,
                &cfg.filter.roughening,
                &estimator,
                rng,
            )
        })
        .collect()
}

/// One MC-JPDAF step with the transitional prior as proposal.
/// `dynamics[k]` propagates target `k`.
pub fn mcjpdaf_step<R: Rng + ?Sized>(
    sets: &[ParticleSet<StateVec>],
    frames: &[ObservationFrame],
    observers: &[Observer],
    dynamics: &[Dynamics],
    cfg: &JpdaConfig,
    rng: &mut R,
) -> Result<JpdaUpdate<StateVec, GaussianBelief>> {
    check_targets(sets)?;
    if dynamics.len() != sets.len() {
        return Err(Error::InvalidArgument(format!(
            "{} motion models for {} targets",
            dynamics.len(),
            sets.len()
        )));
    }
    let predicted: Vec<Vec<StateVec>> = sets
        .iter()
        .zip(dynamics)
        .map(|(s, d)| s.states.iter().map(|x| d.sample(x, rng)).collect())
        .collect();
    let prev: Vec<&[f64]> = sets.iter().map(|s| s.log_weights.as_slice()).collect();
    let (incr, betas, degenerate_observers) =
        associate(&predicted, &prev, frames, observers, &cfg.gate)?;
    let targets = finish(predicted, sets, incr, cfg, belief_from_particles, rng)?;
    Ok(JpdaUpdate {
        targets,
        betas,
        degenerate_observers,
    })
}

/// One multiple-model MC-JPDAF step: regimes move first, then every particle
/// is propagated by its regime's model; `models` and `pi` are shared by all
/// targets.
pub fn mcmmjpdaf_step<R: Rng + ?Sized>(
    sets: &[ParticleSet<AugmentedState>],
    frames: &[ObservationFrame],
    observers: &[Observer],
    pi: &ModeTransitionMatrix,
    models: &[Dynamics],
    cfg: &JpdaConfig,
    rng: &mut R,
) -> Result<JpdaUpdate<AugmentedState, MmpfEstimate>> {
    check_targets(sets)?;
    if models.len() != pi.regimes() {
        return Err(Error::InvalidArgument(format!(
            "{} motion models for {} regimes",
            models.len(),
            pi.regimes()
        )));
    }
    if sets
        .iter()
        .flat_map(|s| &s.states)
        .any(|s| s.regime >= models.len())
    {
        return Err(Error::InvalidArgument(
            "particle regime has no motion model".into(),
        ));
    }
    let mut predicted: Vec<Vec<AugmentedState>> = Vec::with_capacity(sets.len());
    for s in sets {
        let regimes: Vec<usize> = s.states.iter().map(|a| a.regime).collect();
        let moved = regime_transition(&regimes, pi, rng);
        predicted.push(
            s.states
                .iter()
                .zip(moved)
                .map(|(a, regime)| AugmentedState {
                    state: models[regime].sample(&a.state, rng),
                    regime,
                })
                .collect(),
        );
    }
    let plain: Vec<Vec<StateVec>> = predicted
        .iter()
        .map(|p| p.iter().map(|a| a.state).collect())
        .collect();
    let prev: Vec<&[f64]> = sets.iter().map(|s| s.log_weights.as_slice()).collect();
    let (incr, betas, degenerate_observers) =
        associate(&plain, &prev, frames, observers, &cfg.gate)?;
    let regimes = pi.regimes();
    let targets = finish(
        predicted,
        sets,
        incr,
        cfg,
        |st, lw| mmpf_estimate(st, lw, regimes),
        rng,
    )?;
    Ok(JpdaUpdate {
        targets,
        betas,
        degenerate_observers,
    })
}

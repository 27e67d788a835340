//! Monte-Carlo execution of one experiment.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, FilterKind};
use super::metrics::{compute_mse, detect_divergence_and_swaps, TrackOutcome};
use crate::error::Result;
use crate::filters::{
    bearings_only_ekf_step, bootstrap_step, ekf_predict, ekf_step, generic_pf_step, Dynamics,
    GaussianBelief, ResamplePolicy, TransitionalPrior, Update,
};
use crate::ippf::{ippf_step, joint_bootstrap_step, partitioned_from_beliefs, IppfConfig};
use crate::jpda::filter::{
    augmented_sets_from_beliefs, mcjpdaf_step, mcmmjpdaf_step, target_sets_from_beliefs, JpdaConfig,
};
use crate::mmpf::{augmented_from_belief, mmpf_step, MmpfConfig, MmpfEstimate};
use crate::models::{
    ownship_input, BearingOnlySensor, MotionKind, OwnshipState, RangeBearing, StateVec,
};
use crate::sim::{
    ownship_track, simulate_bearings_only, simulate_observations, simulate_truth, MeasurementLog,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEstimate {
    pub state: StateVec,
    pub cov_trace: f64,
    /// Empty for single-model filters.
    pub mode_probs: Vec<f64>,
}

impl From<&GaussianBelief> for TargetEstimate {
    fn from(b: &GaussianBelief) -> Self {
        Self {
            state: b.mean,
            cov_trace: b.cov.trace(),
            mode_probs: Vec::new(),
        }
    }
}

impl From<&MmpfEstimate> for TargetEstimate {
    fn from(e: &MmpfEstimate) -> Self {
        Self {
            state: e.belief.mean,
            cov_trace: e.belief.cov.trace(),
            mode_probs: e.mode_probs.clone(),
        }
    }
}

/// One Monte-Carlo run; `truth[t - 1][k]` and `estimates[t - 1][k]` for
/// `t = 1..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub run: usize,
    pub truth: Vec<Vec<StateVec>>,
    pub estimates: Vec<Vec<TargetEstimate>>,
    pub outcome: TrackOutcome,
    /// Filter steps whose weights all vanished.
    pub degenerate_steps: usize,
    /// Observer frames whose association posterior vanished.
    pub degenerate_associations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub filter: FilterKind,
    pub particles: usize,
    pub runs: usize,
    pub seed: u64,
    pub steps: usize,
    pub targets: usize,
    pub divergence_threshold: f64,
    /// `mse[k][t - 1]`: position MSE of target `k` across runs.
    pub mse: Vec<Vec<f64>>,
    /// Mean over time of the per-step RMSE, per target.
    pub time_avg_rmse: Vec<f64>,
    pub final_rmse: Vec<f64>,
    /// `final_errors[run][k]`: final position error after nearest-neighbour
    /// assignment.
    pub final_errors: Vec<Vec<f64>>,
    pub diverged_runs: usize,
    pub diverged_tracks: usize,
    pub divergence_rate: f64,
    pub swapped_runs: usize,
    /// `mode_probs[k][t - 1][regime]` averaged over runs.
    pub mode_probs: Option<Vec<Vec<Vec<f64>>>>,
    /// Mean probability of the true motion model over all steps.
    pub correct_mode_prob: Option<f64>,
    /// The same restricted to steps where the truth is turning.
    pub maneuver_correct_mode_prob: Option<f64>,
    pub degenerate_steps: usize,
    pub degenerate_associations: usize,
    pub wall_clock_s: f64,
}

/// Independent generator for `(run, purpose)`: the base seed with a
/// distinct stream per run, separating simulation from filtering so every
/// filter sees the same data.
pub fn run_rng(seed: u64, run: usize, filtering: bool) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * run as u64 + filtering as u64);
    rng
}

struct Tally {
    degenerate_steps: usize,
    degenerate_associations: usize,
}

impl Tally {
    fn record<S, E>(&mut self, u: &Update<S, E>) {
        self.degenerate_steps += u.degenerate as usize;
    }
}

enum Data {
    Frames(MeasurementLog),
    Bearings {
        bearings: Vec<f64>,
        ownship: Vec<OwnshipState>,
        sensor: BearingOnlySensor,
    },
}

impl Data {
    fn associated(&self, t: usize, targets: usize) -> Vec<RangeBearing> {
        match self {
            Data::Frames(log) => (0..targets)
                .map(|k| {
                    log.frames[t - 1][0]
                        .of_target(k)
                        .expect("pre-associated scenario detects every target")
                })
                .collect(),
            Data::Bearings { .. } => {
                unreachable!("range/bearing data requested from a bearings-only run")
            }
        }
    }
}

/// Runs one seeded Monte-Carlo replication.
pub fn run_single(cfg: &ExperimentConfig, run: usize) -> Result<RunResult> {
    let sc = &cfg.scenario;
    let mut sim_rng = run_rng(cfg.tracker.seed, run, false);
    let mut rng = run_rng(cfg.tracker.seed, run, true);
    let truth_log = simulate_truth(sc, &mut sim_rng)?;
    let data = match &sc.bearings_only {
        Some(b) => {
            let ownship = ownship_track(&b.ownship, sc.step);
            let bearings = simulate_bearings_only(
                &truth_log.target_track(0),
                &ownship,
                b.sigma_bearing,
                &mut sim_rng,
            )?;
            let sensor = BearingOnlySensor::new(b.sigma_bearing.max(1e-6))?;
            Data::Bearings {
                bearings,
                ownship,
                sensor,
            }
        }
        None => Data::Frames(simulate_observations(&truth_log, sc, &mut sim_rng)?),
    };
    let mut tally = Tally {
        degenerate_steps: 0,
        degenerate_associations: 0,
    };
    let estimates = run_filter(cfg, &data, &mut tally, &mut rng)?;
    let truth: Vec<Vec<StateVec>> = truth_log.states[1..].to_vec();
    let last_est: Vec<StateVec> = estimates
        .last()
        .map_or(Vec::new(), |e| e.iter().map(|x| x.state).collect());
    let last_truth = truth.last().cloned().unwrap_or_default();
    let outcome =
        detect_divergence_and_swaps(&last_est, &last_truth, cfg.tracker.divergence_threshold);
    Ok(RunResult {
        run,
        truth,
        estimates,
        outcome,
        degenerate_steps: tally.degenerate_steps,
        degenerate_associations: tally.degenerate_associations,
    })
}

fn run_filter(
    cfg: &ExperimentConfig,
    data: &Data,
    tally: &mut Tally,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<TargetEstimate>>> {
    let sc = &cfg.scenario;
    let h = sc.horizon();
    let k = cfg.targets();
    let priors = cfg.priors()?;
    let dyns = cfg.dynamics_per_target()?;
    let mut out = Vec::with_capacity(h);

    if let Data::Bearings {
        bearings,
        ownship,
        sensor,
    } = data
    {
        return run_bearings_only(
            cfg, bearings, ownship, sensor, &priors[0], &dyns[0], tally, rng,
        );
    }
    let observers = sc.observers().ok();
    let sensors: Vec<_> = sc
        .sensors
        .iter()
        .map(|s| s.sensor())
        .collect::<Result<_>>()?;
    let n = cfg.tracker.particles;

    match cfg.tracker.filter {
        FilterKind::Ekf => {
            let mut beliefs = priors.clone();
            for t in 1..=h {
                let zs = data.associated(t, k);
                for (b, (z, d)) in beliefs.iter_mut().zip(zs.iter().zip(&dyns)) {
                    *b = match ekf_step(b, z, d, &sensors[0]) {
                        Ok(next) => next,
                        Err(_) => {
                            tally.degenerate_steps += 1;
                            ekf_predict(b, d)
                        }
                    };
                }
                out.push(beliefs.iter().map(TargetEstimate::from).collect());
            }
        }
        FilterKind::Pf => {
            let fc = cfg.filter_config()?;
            let mut sets = target_sets_from_beliefs(&priors, n, rng)?;
            for t in 1..=h {
                let zs = data.associated(t, k);
                let mut row = Vec::with_capacity(k);
                for (s, (z, d)) in sets.iter_mut().zip(zs.iter().zip(&dyns)) {
                    let u = generic_pf_step(s, z, &TransitionalPrior(d), d, &sensors[0], &fc, rng)?;
                    tally.record(&u);
                    row.push(TargetEstimate::from(&u.estimate));
                    *s = u.set;
                }
                out.push(row);
            }
        }
        FilterKind::Bootstrap if k == 1 => {
            let fc = cfg.filter_config()?;
            let mut set = priors[0].sample_particles(n, rng)?;
            for t in 1..=h {
                let z = data.associated(t, 1)[0];
                let u = bootstrap_step(&set, &z, &dyns[0], &sensors[0], &fc, rng)?;
                tally.record(&u);
                out.push(vec![TargetEstimate::from(&u.estimate)]);
                set = u.set;
            }
        }
        FilterKind::Bootstrap | FilterKind::Ippf => {
            let fc = cfg.filter_config()?;
            let meas = vec![sensors[0]; k];
            let mut set = partitioned_from_beliefs(&priors, n, rng)?;
            let icfg = IppfConfig {
                sampler: cfg.tracker.index_sampler,
                ..IppfConfig::new(fc)
            };
            for t in 1..=h {
                let zs = data.associated(t, k);
                let u = if cfg.tracker.filter == FilterKind::Ippf {
                    ippf_step(&set, &zs, &dyns, &meas, &icfg, rng)?
                } else {
                    joint_bootstrap_step(&set, &zs, &dyns, &meas, &fc, rng)?
                };
                tally.record(&u);
                out.push(u.estimate.iter().map(TargetEstimate::from).collect());
                set = u.set;
            }
        }
        FilterKind::Mmpf => {
            let fc = cfg.filter_config()?;
            let pi = cfg.mode_transition()?;
            let models = cfg.regime_dynamics()?;
            let mcfg = MmpfConfig::new(fc);
            let mut sets = priors
                .iter()
                .map(|p| augmented_from_belief(p, n, &cfg.tracker.initial_modes, rng))
                .collect::<Result<Vec<_>>>()?;
            for t in 1..=h {
                let zs = data.associated(t, k);
                let mut row = Vec::with_capacity(k);
                for (s, (z, m)) in sets.iter_mut().zip(zs.iter().zip(&models)) {
                    let u = mmpf_step(s, z, &pi, m, &sensors[0], &mcfg, rng)?;
                    tally.record(&u);
                    row.push(TargetEstimate::from(&u.estimate));
                    *s = u.set;
                }
                out.push(row);
            }
        }
        FilterKind::Mcjpdaf | FilterKind::Mcmmjpdaf => {
            let Data::Frames(log) = data else {
                unreachable!()
            };
            let observers = observers.expect("validated scenario has association models");
            let fc = cfg.filter_config()?;
            let jcfg = JpdaConfig {
                filter: fc,
                gate: cfg.gate()?,
                policy: ResamplePolicy::BelowThreshold(fc.n_thr),
            };
            if cfg.tracker.filter == FilterKind::Mcjpdaf {
                let mut sets = target_sets_from_beliefs(&priors, n, rng)?;
                for t in 1..=h {
                    let u = mcjpdaf_step(&sets, &log.unlabelled(t), &observers, &dyns, &jcfg, rng)?;
                    tally.degenerate_associations += u.degenerate_observers.len();
                    u.targets.iter().for_each(|x| tally.record(x));
                    out.push(
                        u.targets
                            .iter()
                            .map(|x| TargetEstimate::from(&x.estimate))
                            .collect(),
                    );
                    sets = u.targets.into_iter().map(|x| x.set).collect();
                }
            } else {
                let pi = cfg.mode_transition()?;
                let models = cfg.regime_dynamics()?.swap_remove(0);
                let mut sets =
                    augmented_sets_from_beliefs(&priors, n, &cfg.tracker.initial_modes, rng)?;
                for t in 1..=h {
                    let u = mcmmjpdaf_step(
                        &sets,
                        &log.unlabelled(t),
                        &observers,
                        &pi,
                        &models,
                        &jcfg,
                        rng,
                    )?;
                    tally.degenerate_associations += u.degenerate_observers.len();
                    u.targets.iter().for_each(|x| tally.record(x));
                    out.push(
                        u.targets
                            .iter()
                            .map(|x| TargetEstimate::from(&x.estimate))
                            .collect(),
                    );
                    sets = u.targets.into_iter().map(|x| x.set).collect();
                }
            }
        }
    }
    Ok(out)
}

/// Relative-state filtering; estimates are returned in absolute coordinates.
#[allow(clippy::too_many_arguments)]
fn run_bearings_only(
    cfg: &ExperimentConfig,
    bearings: &[f64],
    ownship: &[OwnshipState],
    sensor: &BearingOnlySensor,
    prior: &GaussianBelief,
    dynamics: &Dynamics,
    tally: &mut Tally,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<TargetEstimate>>> {
    let absolute = |b: &GaussianBelief, t: usize| TargetEstimate {
        state: b.mean + ownship[t].0,
        cov_trace: b.cov.trace(),
        mode_probs: Vec::new(),
    };
    let mut out = Vec::with_capacity(bearings.len());
    match cfg.tracker.filter {
        FilterKind::Ekf => {
            let mut belief = *prior;
            for (i, b) in bearings.iter().enumerate() {
                let t = i + 1;
                let u = ownship_input(&ownship[t], &ownship[t - 1]);
                let d = dynamics.clone().with_input(u);
                belief = match bearings_only_ekf_step(&belief, *b, &dynamics.transition, &u, sensor)
                {
                    Ok(next) => next,
                    Err(_) => {
                        tally.degenerate_steps += 1;
                        ekf_predict(&belief, &d)
                    }
                };
                out.push(vec![absolute(&belief, t)]);
            }
        }
        kind => {
            let fc = cfg.filter_config()?;
            let mut set = prior.sample_particles(cfg.tracker.particles, rng)?;
            for (i, b) in bearings.iter().enumerate() {
                let t = i + 1;
                let d = dynamics
                    .clone()
                    .with_input(ownship_input(&ownship[t], &ownship[t - 1]));
                let u = if kind == FilterKind::Bootstrap {
                    bootstrap_step(&set, b, &d, sensor, &fc, rng)?
                } else {
                    generic_pf_step(&set, b, &TransitionalPrior(&d), &d, sensor, &fc, rng)?
                };
                tally.record(&u);
                out.push(vec![absolute(&u.estimate, t)]);
                set = u.set;
            }
        }
    }
    Ok(out)
}

fn same_motion(a: &MotionKind, b: &MotionKind) -> bool {
    match (a, b) {
        (MotionKind::Cv, MotionKind::Cv) => true,
        (MotionKind::Ct { turn_rate: x }, MotionKind::Ct { turn_rate: y }) => (x - y).abs() < 1e-9,
        _ => false,
    }
}

/// Aggregates runs (in run order) into a report.
pub fn aggregate(
    cfg: &ExperimentConfig,
    runs: &[RunResult],
    wall_clock_s: f64,
) -> Result<MetricsReport> {
    let k = cfg.targets();
    let steps = cfg.scenario.horizon();
    let mut mse = Vec::with_capacity(k);
    for target in 0..k {
        let est: Vec<Vec<StateVec>> = runs
            .iter()
            .map(|r| r.estimates.iter().map(|e| e[target].state).collect())
            .collect();
        let tru: Vec<Vec<StateVec>> = runs
            .iter()
            .map(|r| r.truth.iter().map(|s| s[target]).collect())
            .collect();
        mse.push(compute_mse(&est, &tru)?);
    }
    let time_avg_rmse = mse
        .iter()
        .map(|m| m.iter().map(|v| v.sqrt()).sum::<f64>() / m.len().max(1) as f64)
        .collect();
    let final_rmse = mse
        .iter()
        .map(|m| m.last().map_or(0.0, |v| v.sqrt()))
        .collect();
    let diverged_runs = runs.iter().filter(|r| r.outcome.any_diverged()).count();

    let multiple_model = cfg.tracker.filter.is_multiple_model();
    let (mode_probs, correct, maneuver) = if multiple_model {
        let s = cfg.tracker.models.len();
        let mut mp = vec![vec![vec![0.0; s]; steps]; k];
        let (mut c_sum, mut c_n, mut m_sum, mut m_n) = (0.0, 0usize, 0.0, 0usize);
        for r in runs {
            for (t, row) in r.estimates.iter().enumerate() {
                for (target, e) in row.iter().enumerate() {
                    for (acc, p) in mp[target][t].iter_mut().zip(&e.mode_probs) {
                        *acc += p / runs.len() as f64;
                    }
                    let truth_kind = cfg.scenario.motion_at(target, t + 1);
                    if let Some(i) = cfg
                        .tracker
                        .models
                        .iter()
                        .position(|m| same_motion(m, &truth_kind))
                    {
                        c_sum += e.mode_probs[i];
                        c_n += 1;
                        if matches!(truth_kind, MotionKind::Ct { .. }) {
                            m_sum += e.mode_probs[i];
                            m_n += 1;
                        }
                    }
                }
            }
        }
        let avg = |s: f64, n: usize| (n > 0).then(|| s / n as f64);
        (Some(mp), avg(c_sum, c_n), avg(m_sum, m_n))
    } else {
        (None, None, None)
    };

    Ok(MetricsReport {
        scenario: cfg.scenario.name.clone(),
        filter: cfg.tracker.filter,
        particles: cfg.tracker.particles,
        runs: runs.len(),
        seed: cfg.tracker.seed,
        steps,
        targets: k,
        divergence_threshold: cfg.tracker.divergence_threshold,
        mse,
        time_avg_rmse,
        final_rmse,
        final_errors: runs.iter().map(|r| r.outcome.errors.clone()).collect(),
        diverged_runs,
        diverged_tracks: runs
            .iter()
            .map(|r| r.outcome.diverged.iter().filter(|d| **d).count())
            .sum(),
        divergence_rate: diverged_runs as f64 / runs.len().max(1) as f64,
        swapped_runs: runs.iter().filter(|r| r.outcome.swapped).count(),
        mode_probs,
        correct_mode_prob: correct,
        maneuver_correct_mode_prob: maneuver,
        degenerate_steps: runs.iter().map(|r| r.degenerate_steps).sum(),
        degenerate_associations: runs.iter().map(|r| r.degenerate_associations).sum(),
        wall_clock_s,
    })
}

/// Runs every replication in parallel and aggregates them in run order.
pub fn run_monte_carlo(cfg: &ExperimentConfig) -> Result<(MetricsReport, Vec<RunResult>)> {
    cfg.validate()?;
    let start = Instant::now();
    let runs: Vec<RunResult> = (0..cfg.tracker.runs)
        .into_par_iter()
        .map(|r| run_single(cfg, r))
        .collect::<Result<_>>()?;
    let report = aggregate(cfg, &runs, start.elapsed().as_secs_f64())?;
    Ok((report, runs))
}

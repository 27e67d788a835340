//! Single-target filters with known association: SIS, the generic and
//! bootstrap particle filters, the EKF baseline and their bearings-only
//! (moving ownship) variants.

use log::warn;
use nalgebra::{Matrix4, SMatrix, SVector, Vector4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    bearing_north_clockwise, range_bearing, wrap_angle, BearingOnlySensor, LinearGaussian,
    MeasurementNoise, OwnshipState, RangeBearing, RangeBearingSensor, SensorPose, StateVec,
};
use crate::particles::{
    effective_sample_size_log, normalize_log_weights, resample_indices, roughen_states,
    state_mean_cov, Components, ParticleSet, ResampleScheme, RougheningParams,
};

/// Log-likelihood `log p(z | x)` of a measurement.
pub trait MeasurementModel<Z> {
    fn log_likelihood(&self, z: &Z, x: &StateVec) -> f64;
}

impl MeasurementModel<RangeBearing> for RangeBearingSensor {
    fn log_likelihood(&self, z: &RangeBearing, x: &StateVec) -> f64 {
        RangeBearingSensor::log_likelihood(self, z, x)
    }
}

impl MeasurementModel<f64> for BearingOnlySensor {
    fn log_likelihood(&self, z: &f64, x: &StateVec) -> f64 {
        BearingOnlySensor::log_likelihood(self, *z, x)
    }
}

/// Target dynamics `x' = F x - u + w`, `w ~ N(0, Q)`, where `u` is a known
/// deterministic input (zero except for moving-observer relative states).
#[derive(Debug, Clone, PartialEq)]
pub struct Dynamics {
    pub transition: LinearGaussian,
    pub input: Vector4<f64>,
}

impl Dynamics {
    pub fn new(transition: LinearGaussian) -> Self {
        Self {
            transition,
            input: Vector4::zeros(),
        }
    }

    pub fn with_input(mut self, input: Vector4<f64>) -> Self {
        self.input = input;
        self
    }

    pub fn mean(&self, x: &StateVec) -> StateVec {
        self.transition.mean(x) - self.input
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: &StateVec, rng: &mut R) -> StateVec {
        self.transition.sample(x, rng) - self.input
    }

    pub fn log_density(&self, x_next: &StateVec, x_prev: &StateVec) -> Result<f64> {
        self.transition.log_density(&(x_next + self.input), x_prev)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        self.transition.matrix()
    }

    pub fn noise_cov(&self) -> &Matrix4<f64> {
        self.transition.noise().cov()
    }
}

/// Importance density `q(x | x_prev, z)`.
pub trait ProposalDensity<Z> {
    fn propose<R: Rng + ?Sized>(&self, x_prev: &StateVec, z: &Z, rng: &mut R) -> StateVec;
    fn log_density(&self, x_new: &StateVec, x_prev: &StateVec, z: &Z) -> Result<f64>;

    /// When true the transition and proposal terms cancel in the weight
    /// update and are never evaluated.
    fn is_transitional_prior(&self) -> bool {
        false
    }
}

/// The motion model itself used as the importance density.
#[derive(Debug, Clone, Copy)]
pub struct TransitionalPrior<'a>(pub &'a Dynamics);

impl<Z> ProposalDensity<Z> for TransitionalPrior<'_> {
    fn propose<R: Rng + ?Sized>(&self, x_prev: &StateVec, _z: &Z, rng: &mut R) -> StateVec {
        self.0.sample(x_prev, rng)
    }

    fn log_density(&self, x_new: &StateVec, x_prev: &StateVec, _z: &Z) -> Result<f64> {
        self.0.log_density(x_new, x_prev)
    }

    fn is_transitional_prior(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub n_particles: usize,
    /// Resample when the effective sample size falls below this.
    pub n_thr: f64,
    pub roughening: RougheningParams,
    pub resample_scheme: ResampleScheme,
}

impl FilterConfig {
    pub fn new(n_particles: usize) -> Result<Self> {
        let cfg = Self {
            n_particles,
            n_thr: n_particles as f64 / 2.0,
            roughening: RougheningParams::default(),
            resample_scheme: ResampleScheme::Systematic,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::InvalidArgument(
                "at least one particle is required".into(),
            ));
        }
        if !(self.n_thr >= 1.0 && self.n_thr <= self.n_particles as f64) {
            return Err(Error::InvalidArgument(format!(
                "resampling threshold {} outside [1, {}]",
                self.n_thr, self.n_particles
            )));
        }
        if !(self.roughening.tuning_k >= 0.0) {
            return Err(Error::InvalidArgument(
                "roughening constant must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Gaussian summary of a state estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    pub mean: StateVec,
    pub cov: Matrix4<f64>,
}

impl GaussianBelief {
    pub fn new(mean: StateVec, cov: Matrix4<f64>) -> Result<Self> {
        if cov.cholesky().is_none()
            || (cov - cov.transpose()).abs().max() > 1e-9 * cov.abs().max().max(1.0)
        {
            return Err(Error::InvalidArgument(
                "covariance must be symmetric positive definite".into(),
            ));
        }
        Ok(Self { mean, cov })
    }

    pub fn diagonal(mean: StateVec, var: [f64; 4]) -> Result<Self> {
        Self::new(mean, Matrix4::from_diagonal(&Vector4::from(var)))
    }

    /// Draws `n` particles from this Gaussian with uniform weights.
    pub fn sample_particles<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<ParticleSet<StateVec>> {
        let l = crate::models::psd_cholesky(&self.cov)?;
        let states = (0..n)
            .map(|_| self.mean + l * crate::models::standard_normal4(rng))
            .collect();
        ParticleSet::uniform(states)
    }
}

/// When a step decides to resample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResamplePolicy {
    Always,
    BelowThreshold(f64),
    Never,
}

/// Result of a weighting/resampling stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Update<S, E> {
    pub set: ParticleSet<S>,
    /// Computed from the weighted set before any resampling.
    pub estimate: E,
    pub resampled: bool,
    /// True when every weight vanished and the step fell back to the prediction.
    pub degenerate: bool,
    pub ess: f64,
}

/// Applies log-weight increments to predicted particles, normalizes,
/// extracts the estimate, then resamples and roughens according to `policy`.
///
/// If all weights vanish, the estimate is taken from the predicted particles
/// under their previous weights and the weights are reset to uniform.
#[allow(clippy::too_many_arguments)]
pub fn reweight_and_resample<S, E, R>(
    predicted: Vec<S>,
    prev_log_w: &[f64],
    increments: &[f64],
    policy: ResamplePolicy,
    scheme: ResampleScheme,
    roughening: &RougheningParams,
    estimator: impl Fn(&[S], &[f64]) -> E,
    rng: &mut R,
) -> Result<Update<S, E>>
where
    S: Clone + Components,
    R: Rng + ?Sized,
{
    let n = predicted.len();
    let mut log_w: Vec<f64> = prev_log_w
        .iter()
        .zip(increments)
        .map(|(w, d)| w + d)
        .collect();
    if normalize_log_weights(&mut log_w).is_err() {
        warn!("all particle weights vanished; keeping the prediction");
        let estimate = estimator(&predicted, prev_log_w);
        let set = ParticleSet::uniform(predicted)?;
        return Ok(Update {
            set,
            estimate,
            resampled: false,
            degenerate: true,
            ess: n as f64,
        });
    }
    let estimate = estimator(&predicted, &log_w);
    let ess = effective_sample_size_log(&log_w)?;
    let fire = match policy {
        ResamplePolicy::Always => true,
        ResamplePolicy::BelowThreshold(t) => ess < t,
        ResamplePolicy::Never => false,
    };
    let set = ParticleSet::new(predicted, log_w)?;
    if !fire {
        return Ok(Update {
            set,
            estimate,
            resampled: false,
            degenerate: false,
            ess,
        });
    }
    let idx = resample_indices(scheme, &set.weights(), n, rng)?;
    let mut out = set.select(&idx);
    roughen_states(&mut out.states, roughening, rng);
    Ok(Update {
        set: out,
        estimate,
        resampled: true,
        degenerate: false,
        ess,
    })
}

pub fn belief_from_particles(states: &[StateVec], log_w: &[f64]) -> GaussianBelief {
    let (mean, cov) = state_mean_cov(states, log_w);
    GaussianBelief { mean, cov }
}

/// One sequential-importance-sampling step (no resampling).
///
/// Each particle is drawn from `q` and its log-weight incremented by
/// `log p(z|x) + log p(x|x') - log q(x|x', z)`; with the transitional prior
/// the last two terms cancel and only the likelihood is added.
pub fn sis_step<Z, Q, M, R>(
    ps: &ParticleSet<StateVec>,
    z: &Z,
    proposal: &Q,
    dynamics: &Dynamics,
    meas: &M,
    rng: &mut R,
) -> Result<ParticleSet<StateVec>>
where
    Q: ProposalDensity<Z>,
    M: MeasurementModel<Z>,
    R: Rng + ?Sized,
{
    let (states, incr) = propose_and_weigh(ps, z, proposal, dynamics, meas, rng)?;
    let mut log_w: Vec<f64> = ps
        .log_weights
        .iter()
        .zip(&incr)
        .map(|(w, d)| w + d)
        .collect();
    normalize_log_weights(&mut log_w)?;
    ParticleSet::new(states, log_w)
}

fn propose_and_weigh<Z, Q, M, R>(
    ps: &ParticleSet<StateVec>,
    z: &Z,
    proposal: &Q,
    dynamics: &Dynamics,
    meas: &M,
    rng: &mut R,
) -> Result<(Vec<StateVec>, Vec<f64>)>
where
    Q: ProposalDensity<Z>,
    M: MeasurementModel<Z>,
    R: Rng + ?Sized,
{
    let states: Vec<StateVec> = ps
        .states
        .iter()
        .map(|x| proposal.propose(x, z, rng))
        .collect();
    let mut incr = Vec::with_capacity(states.len());
    for (x, xp) in states.iter().zip(&ps.states) {
        let mut d = meas.log_likelihood(z, x);
        if !proposal.is_transitional_prior() {
            d += dynamics.log_density(x, xp)? - proposal.log_density(x, xp, z)?;
        }
        incr.push(d);
    }
    Ok((states, incr))
}

/// SIS followed by resampling and roughening when the effective sample size
/// drops below `cfg.n_thr`.
pub fn generic_pf_step<Z, Q, M, R>(
    ps: &ParticleSet<StateVec>,
    z: &Z,
    proposal: &Q,
    dynamics: &Dynamics,
    meas: &M,
    cfg: &FilterConfig,
    rng: &mut R,
) -> Result<Update<StateVec, GaussianBelief>>
where
    Q: ProposalDensity<Z>,
    M: MeasurementModel<Z>,
    R: Rng + ?Sized,
{
    let (states, incr) = propose_and_weigh(ps, z, proposal, dynamics, meas, rng)?;
    reweight_and_resample(
        states,
        &ps.log_weights,
        &incr,
        ResamplePolicy::BelowThreshold(cfg.n_thr),
        cfg.resample_scheme,
        &cfg.roughening,
        belief_from_particles,
        rng,
    )
}

/// Bootstrap filter: transitional-prior proposal, resampling every step.
pub fn bootstrap_step<Z, M, R>(
    ps: &ParticleSet<StateVec>,
    z: &Z,
    dynamics: &Dynamics,
    meas: &M,
    cfg: &FilterConfig,
    rng: &mut R,
) -> Result<Update<StateVec, GaussianBelief>>
where
    M: MeasurementModel<Z>,
    R: Rng + ?Sized,
{
    let (states, incr) =
        propose_and_weigh(ps, z, &TransitionalPrior(dynamics), dynamics, meas, rng)?;
    reweight_and_resample(
        states,
        &ps.log_weights,
        &incr,
        ResamplePolicy::Always,
        cfg.resample_scheme,
        &cfg.roughening,
        belief_from_particles,
        rng,
    )
}

/// Kalman prediction `x = F x - u`, `P = F P F^T + Q`.
pub fn ekf_predict(belief: &GaussianBelief, dynamics: &Dynamics) -> GaussianBelief {
    let f = dynamics.matrix();
    let cov = f * belief.cov * f.transpose() + dynamics.noise_cov();
    GaussianBelief {
        mean: dynamics.mean(&belief.mean),
        cov: (cov + cov.transpose()) * 0.5,
    }
}

/// Kalman measurement update for an `M`-dimensional (linearized) measurement,
/// given the innovation `z - h(x)`, Jacobian `H` and noise `R`.
/// Uses the Joseph form for the covariance.
pub fn kalman_update<const M: usize>(
    belief: &GaussianBelief,
    innovation: &SVector<f64, M>,
    h: &SMatrix<f64, M, 4>,
    r: &SMatrix<f64, M, M>,
) -> Result<GaussianBelief> {
    let s = h * belief.cov * h.transpose() + r;
    let s_inv = s
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Numeric("innovation covariance is singular".into()))?;
    let k = belief.cov * h.transpose() * s_inv;
    let mean = belief.mean + k * innovation;
    let a = Matrix4::identity() - k * h;
    let cov = a * belief.cov * a.transpose() + k * r * k.transpose();
    Ok(GaussianBelief {
        mean,
        cov: (cov + cov.transpose()) * 0.5,
    })
}

/// Jacobian of `(range, bearing)` at `x` for a sensor at `s`.
pub fn range_bearing_jacobian(x: &StateVec, s: &SensorPose) -> Result<SMatrix<f64, 2, 4>> {
    let dx = x[0] - s.x0;
    let dy = x[2] - s.y0;
    let r2 = dx * dx + dy * dy;
    if r2 == 0.0 {
        return Err(Error::DegenerateGeometry(
            "linearization point coincides with sensor".into(),
        ));
    }
    let r = r2.sqrt();
    Ok(SMatrix::<f64, 2, 4>::new(
        dx / r,
        0.0,
        dy / r,
        0.0, //
        -dy / r2,
        0.0,
        dx / r2,
        0.0,
    ))
}

/// EKF range/bearing update with the Jacobian at the given (predicted) mean
/// and a wrapped bearing innovation.
pub fn ekf_update(
    belief: &GaussianBelief,
    z: &RangeBearing,
    sensor: &RangeBearingSensor,
) -> Result<GaussianBelief> {
    let pred = range_bearing(&belief.mean, &sensor.pose)?;
    let h = range_bearing_jacobian(&belief.mean, &sensor.pose)?;
    let innov = SVector::<f64, 2>::new(z.range - pred.range, wrap_angle(z.bearing - pred.bearing));
    kalman_update(belief, &innov, &h, &sensor.noise.cov())
}

pub fn ekf_step(
    belief: &GaussianBelief,
    z: &RangeBearing,
    dynamics: &Dynamics,
    sensor: &RangeBearingSensor,
) -> Result<GaussianBelief> {
    ekf_update(&ekf_predict(belief, dynamics), z, sensor)
}

/// Same as [`ekf_step`] with the pieces passed separately.
pub fn ekf_step_with(
    belief: &GaussianBelief,
    z: &RangeBearing,
    transition: &LinearGaussian,
    pose: &SensorPose,
    noise: &MeasurementNoise,
) -> Result<GaussianBelief> {
    ekf_step(
        belief,
        z,
        &Dynamics::new(transition.clone()),
        &RangeBearingSensor::new(*pose, *noise),
    )
}

/// Relative-state bearings-only EKF step; `u` is the ownship input.
pub fn bearings_only_ekf_step(
    belief: &GaussianBelief,
    bearing: f64,
    transition: &LinearGaussian,
    u: &Vector4<f64>,
    sensor: &BearingOnlySensor,
) -> Result<GaussianBelief> {
    let dynamics = Dynamics::new(transition.clone()).with_input(*u);
    let pred = ekf_predict(belief, &dynamics);
    let (x, y) = (pred.mean[0], pred.mean[2]);
    let r2 = x * x + y * y;
    let predicted = bearing_north_clockwise(&pred.mean)?;
    let h = SMatrix::<f64, 1, 4>::new(y / r2, 0.0, -x / r2, 0.0);
    let innov = SVector::<f64, 1>::new(wrap_angle(bearing - predicted));
    let r = SMatrix::<f64, 1, 1>::new(sensor.sigma_theta.powi(2));
    kalman_update(&pred, &innov, &h, &r)
}

/// Relative-state bearings-only bootstrap step; `u` is the ownship input.
pub fn bearings_only_pf_step<R: Rng + ?Sized>(
    ps: &ParticleSet<StateVec>,
    bearing: f64,
    transition: &LinearGaussian,
    u: &Vector4<f64>,
    sensor: &BearingOnlySensor,
    cfg: &FilterConfig,
    rng: &mut R,
) -> Result<Update<StateVec, GaussianBelief>> {
    let dynamics = Dynamics::new(transition.clone()).with_input(*u);
    bootstrap_step(ps, &bearing, &dynamics, sensor, cfg, rng)
}

/// Absolute target state from a relative estimate and the ownship state.
pub fn absolute_from_relative(rel: &StateVec, own: &OwnshipState) -> StateVec {
    rel + own.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{cv_matrix, white_noise_q, ProcessNoise};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn cv_dynamics(q: [f64; 4]) -> Dynamics {
        Dynamics::new(
            LinearGaussian::new(cv_matrix(1.0).unwrap(), ProcessNoise::diagonal(q).unwrap())
                .unwrap(),
        )
    }

    fn sensor() -> RangeBearingSensor {
        RangeBearingSensor::new(
            SensorPose::origin(),
            MeasurementNoise::new(10f64.sqrt(), 1.0).unwrap(),
        )
    }

    /// Random-walk proposal around the prior mean, wider than the prior.
    struct WideProposal<'a>(&'a Dynamics);

    impl<Z> ProposalDensity<Z> for WideProposal<'_> {
        fn propose<R: Rng + ?Sized>(&self, x_prev: &StateVec, _z: &Z, rng: &mut R) -> StateVec {
            self.0.mean(x_prev) + crate::models::standard_normal4(rng) * 3.0
        }
        fn log_density(&self, x_new: &StateVec, x_prev: &StateVec, _z: &Z) -> Result<f64> {
            let e = (x_new - self.0.mean(x_prev)) / 3.0;
            Ok(-0.5 * e.norm_squared() - 4.0 * 3f64.ln() - 2.0 * (2.0 * std::f64::consts::PI).ln())
        }
    }

    #[test]
    fn prior_proposal_increment_is_likelihood() {
        let dynamics = cv_dynamics([5.0, 1.0, 5.0, 1.0]);
        let meas = sensor();
        let prior = GaussianBelief::diagonal(
            StateVec::new(100.0, 20.0, 100.0, 20.0),
            [100.0, 10.0, 100.0, 10.0],
        )
        .unwrap();
        let ps = prior.sample_particles(200, &mut rng(1)).unwrap();
        let z = RangeBearing::new(170.0, 0.8);
        let out = sis_step(
            &ps,
            &z,
            &TransitionalPrior(&dynamics),
            &dynamics,
            &meas,
            &mut rng(2),
        )
        .unwrap();

        // replay the same draws and evaluate all three terms explicitly
        let mut r = rng(2);
        let mut lw = Vec::new();
        for (xp, w) in ps.states.iter().zip(&ps.log_weights) {
            let x = dynamics.sample(xp, &mut r);
            let three = meas.log_likelihood(&z, &x) + dynamics.log_density(&x, xp).unwrap()
                - TransitionalPrior(&dynamics)
                    .log_density(&x, xp, &z)
                    .unwrap();
            assert!((three - meas.log_likelihood(&z, &x)).abs() < 1e-10);
            lw.push(w + three);
        }
        normalize_log_weights(&mut lw).unwrap();
        for (a, b) in lw.iter().zip(&out.log_weights) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((out.weights().iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn general_proposal_uses_three_terms() {
        let dynamics = cv_dynamics([5.0, 1.0, 5.0, 1.0]);
        let meas = sensor();
        let ps = ParticleSet::uniform(vec![StateVec::new(100.0, 20.0, 100.0, 20.0); 50]).unwrap();
        let z = RangeBearing::new(170.0, 0.8);
        let q = WideProposal(&dynamics);
        let out = sis_step(&ps, &z, &q, &dynamics, &meas, &mut rng(3)).unwrap();
        let mut lw: Vec<f64> = out
            .states
            .iter()
            .zip(&ps.states)
            .map(|(x, xp)| {
                meas.log_likelihood(&z, x) + dynamics.log_density(x, xp).unwrap()
                    - q.log_density(x, xp, &z).unwrap()
            })
            .collect();
        normalize_log_weights(&mut lw).unwrap();
        for (a, b) in lw.iter().zip(&out.log_weights) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn perfect_measurement_selects_particle() {
        let dynamics = Dynamics::new(
            LinearGaussian::new(cv_matrix(1.0).unwrap(), ProcessNoise::zero()).unwrap(),
        );
        let meas = RangeBearingSensor::new(
            SensorPose::origin(),
            MeasurementNoise::new(1e-3, 1e-5).unwrap(),
        );
        let states: Vec<StateVec> = (0..10)
            .map(|i| StateVec::new(50.0 + 10.0 * i as f64, 1.0, 30.0, 0.0))
            .collect();
        let ps = ParticleSet::uniform(states).unwrap();
        let target = dynamics.mean(&ps.states[3]);
        let z = range_bearing(&target, &SensorPose::origin()).unwrap();
        let out = sis_step(
            &ps,
            &z,
            &TransitionalPrior(&dynamics),
            &dynamics,
            &meas,
            &mut rng(4),
        )
        .unwrap();
        assert!(out.weights()[3] > 1.0 - 1e-9);
    }

    #[test]
    fn bootstrap_resamples_every_step() {
        let dynamics = cv_dynamics([5.0, 1.0, 5.0, 1.0]);
        let cfg = FilterConfig::new(100).unwrap();
        let prior = GaussianBelief::diagonal(
            StateVec::new(100.0, 20.0, 100.0, 20.0),
            [100.0, 10.0, 100.0, 10.0],
        )
        .unwrap();
        let mut r = rng(5);
        let mut ps = prior.sample_particles(100, &mut r).unwrap();
        let mut truth = prior.mean;
        for _ in 0..10 {
            truth = dynamics.mean(&truth);
            let z = range_bearing(&truth, &SensorPose::origin()).unwrap();
            let up = bootstrap_step(&ps, &z, &dynamics, &sensor(), &cfg, &mut r).unwrap();
            assert_eq!(up.set.len(), 100);
            assert!(up.resampled);
            assert!(up
                .set
                .log_weights
                .iter()
                .all(|w| (w + 100f64.ln()).abs() < 1e-12));
            ps = up.set;
        }
    }

    #[test]
    fn generic_threshold_behaviour() {
        let dynamics = cv_dynamics([5.0, 1.0, 5.0, 1.0]);
        let prior = GaussianBelief::diagonal(
            StateVec::new(100.0, 20.0, 100.0, 20.0),
            [100.0, 10.0, 100.0, 10.0],
        )
        .unwrap();
        let ps = prior.sample_particles(100, &mut rng(6)).unwrap();
        let z = range_bearing(&dynamics.mean(&prior.mean), &SensorPose::origin()).unwrap();
        let flat = RangeBearingSensor::new(
            SensorPose::origin(),
            MeasurementNoise::new(1e4, 10.0).unwrap(),
        );
        let mut cfg = FilterConfig::new(100).unwrap();
        cfg.n_thr = 1.0;
        let up = generic_pf_step(
            &ps,
            &z,
            &TransitionalPrior(&dynamics),
            &dynamics,
            &flat,
            &cfg,
            &mut rng(7),
        )
        .unwrap();
        assert!(!up.resampled);
        let w = up.set.weights();
        assert!(w.iter().any(|x| (x - 0.01).abs() > 1e-12));

        cfg.n_thr = 100.0;
        let up = generic_pf_step(
            &ps,
            &z,
            &TransitionalPrior(&dynamics),
            &dynamics,
            &sensor(),
            &cfg,
            &mut rng(7),
        )
        .unwrap();
        assert!(up.resampled);
        assert!(up
            .set
            .log_weights
            .iter()
            .all(|w| (w + 100f64.ln()).abs() < 1e-12));
    }

    #[test]
    fn generic_equals_bootstrap_at_full_threshold() {
        let dynamics = cv_dynamics([5.0, 1.0, 5.0, 1.0]);
        let prior = GaussianBelief::diagonal(
            StateVec::new(100.0, 20.0, 100.0, 20.0),
            [100.0, 10.0, 100.0, 10.0],
        )
        .unwrap();
        let mut cfg = FilterConfig::new(50).unwrap();
        cfg.n_thr = 50.0;
        let mut a = prior.sample_particles(50, &mut rng(8)).unwrap();
        let mut b = a.clone();
        let (mut ra, mut rb) = (rng(9), rng(9));
        let mut truth = prior.mean;
        for _ in 0..20 {
            truth = dynamics.mean(&truth);
            let z = range_bearing(&truth, &SensorPose::origin()).unwrap();
            let ua = generic_pf_step(
                &a,
                &z,
                &TransitionalPrior(&dynamics),
                &dynamics,
                &sensor(),
                &cfg,
                &mut ra,
            )
            .unwrap();
            let ub = bootstrap_step(&b, &z, &dynamics, &sensor(), &cfg, &mut rb).unwrap();
            assert_eq!(ua.estimate, ub.estimate);
            a = ua.set;
            b = ub.set;
        }
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_step_keeps_prediction() {
        let dynamics = Dynamics::new(
            LinearGaussian::new(cv_matrix(1.0).unwrap(), ProcessNoise::zero()).unwrap(),
        );
        struct Impossible;
        impl MeasurementModel<()> for Impossible {
            fn log_likelihood(&self, _z: &(), _x: &StateVec) -> f64 {
                f64::NEG_INFINITY
            }
        }
        let ps = ParticleSet::new(
            vec![
                StateVec::new(0.0, 1.0, 0.0, 0.0),
                StateVec::new(10.0, 1.0, 0.0, 0.0),
            ],
            vec![0.75f64.ln(), 0.25f64.ln()],
        )
        .unwrap();
        let cfg = FilterConfig::new(2).unwrap();
        let up = bootstrap_step(&ps, &(), &dynamics, &Impossible, &cfg, &mut rng(10)).unwrap();
        assert!(up.degenerate);
        assert!((up.estimate.mean[0] - 3.5).abs() < 1e-12);
        assert!(up
            .set
            .log_weights
            .iter()
            .all(|w| (w - 0.5f64.ln()).abs() < 1e-15));
        assert!(sis_step(
            &ps,
            &(),
            &TransitionalPrior(&dynamics),
            &dynamics,
            &Impossible,
            &mut rng(10)
        )
        .is_err());
    }

    #[test]
    fn estimate_is_permutation_invariant() {
        let prior = GaussianBelief::diagonal(StateVec::new(1.0, 2.0, 3.0, 4.0), [1.0; 4]).unwrap();
        let mut ps = prior.sample_particles(30, &mut rng(11)).unwrap();
        for (i, w) in ps.log_weights.iter_mut().enumerate() {
            *w = -(i as f64) * 0.1;
        }
        ps.normalize().unwrap();
        let a = belief_from_particles(&ps.states, &ps.log_weights);
        let mut perm: Vec<usize> = (0..30).collect();
        perm.reverse();
        perm.swap(3, 17);
        let s: Vec<StateVec> = perm.iter().map(|&i| ps.states[i]).collect();
        let w: Vec<f64> = perm.iter().map(|&i| ps.log_weights[i]).collect();
        let b = belief_from_particles(&s, &w);
        assert!((a.mean - b.mean).abs().max() < 1e-12);
        assert!((a.cov - b.cov).abs().max() < 1e-12);
    }

    #[test]
    fn ekf_tiny_noise_pulls_to_measurement() {
        let dynamics = cv_dynamics([5.0, 1.0, 5.0, 1.0]);
        let belief = GaussianBelief::diagonal(
            StateVec::new(100.0, 20.0, 100.0, 20.0),
            [100.0, 10.0, 100.0, 10.0],
        )
        .unwrap();
        let sensor = RangeBearingSensor::new(
            SensorPose::origin(),
            MeasurementNoise::new(1e-6, 1e-8).unwrap(),
        );
        let pred = range_bearing(&dynamics.mean(&belief.mean), &SensorPose::origin()).unwrap();
        let z = RangeBearing::new(pred.range + 0.2, pred.bearing + 1e-3);
        let post = ekf_step(&belief, &z, &dynamics, &sensor).unwrap();
        let implied = range_bearing(&post.mean, &SensorPose::origin()).unwrap();
        assert!((implied.range - z.range).abs() < 1e-3);
        assert!((implied.bearing - z.bearing).abs() < 1e-3);
    }

    #[test]
    fn ekf_linear_matches_scalar_kalman() {
        // measure x-position only; the x-axis decouples from y, so a 2-state
        // scalar-by-hand Kalman filter is an exact oracle
        let q = white_noise_q(0.7, 0.7, 1.0).unwrap();
        let dynamics = Dynamics::new(LinearGaussian::new(cv_matrix(1.0).unwrap(), q).unwrap());
        let h = SMatrix::<f64, 1, 4>::new(1.0, 0.0, 0.0, 0.0);
        let r = SMatrix::<f64, 1, 1>::new(4.0);
        let mut belief =
            GaussianBelief::diagonal(StateVec::new(0.0, 1.0, 0.0, 0.0), [9.0, 2.0, 9.0, 2.0])
                .unwrap();
        let (mut p, mut v) = (0.0, 1.0);
        let (mut pp, mut pv, mut vv) = (9.0, 0.0, 2.0);
        let qc = q.cov();
        for k in 0..30 {
            let z = 0.9 * k as f64 + ((k * 7) % 5) as f64 * 0.3;
            let pred = ekf_predict(&belief, &dynamics);
            belief =
                kalman_update(&pred, &SVector::<f64, 1>::new(z - pred.mean[0]), &h, &r).unwrap();

            p += v;
            let (npp, npv, nvv) = (
                pp + 2.0 * pv + vv + qc[(0, 0)],
                pv + vv + qc[(0, 1)],
                vv + qc[(1, 1)],
            );
            let s = npp + 4.0;
            let (k0, k1) = (npp / s, npv / s);
            let innov = z - p;
            p += k0 * innov;
            v += k1 * innov;
            pp = (1.0 - k0) * npp;
            pv = (1.0 - k0) * npv;
            vv = nvv - k1 * npv;
            assert!((belief.mean[0] - p).abs() < 1e-10);
            assert!((belief.mean[1] - v).abs() < 1e-10);
            assert!((belief.cov[(0, 0)] - pp).abs() < 1e-10);
            assert!((belief.cov[(0, 1)] - pv).abs() < 1e-10);
            assert!((belief.cov[(1, 1)] - vv).abs() < 1e-10);
        }
    }

    #[test]
    fn ekf_update_contracts_covariance() {
        let mut r = rng(12);
        for _ in 0..100 {
            let mean = StateVec::new(
                r.random_range(-500.0..500.0),
                1.0,
                r.random_range(-500.0..500.0),
                1.0,
            );
            let belief = GaussianBelief::diagonal(
                mean,
                [
                    r.random_range(1.0..200.0),
                    10.0,
                    r.random_range(1.0..200.0),
                    10.0,
                ],
            )
            .unwrap();
            let sensor = RangeBearingSensor::new(
                SensorPose::new(r.random_range(-50.0..50.0), r.random_range(-50.0..50.0)),
                MeasurementNoise::new(r.random_range(0.5..5.0), r.random_range(0.01..0.5)).unwrap(),
            );
            let z = RangeBearing::new(r.random_range(10.0..700.0), r.random_range(-3.0..3.0));
            let post = ekf_update(&belief, &z, &sensor).unwrap();
            assert!(post.cov.trace() <= belief.cov.trace() + 1e-9);
            let h = range_bearing_jacobian(&belief.mean, &sensor.pose).unwrap();
            assert!(
                (h * post.cov * h.transpose()).trace()
                    <= (h * belief.cov * h.transpose()).trace() + 1e-12
            );
        }
    }

    #[test]
    fn stationary_ownship_reduces_to_plain_filter() {
        let dynamics = cv_dynamics([0.1, 0.01, 0.1, 0.01]);
        let sensor = BearingOnlySensor::new(0.05).unwrap();
        let belief = GaussianBelief::diagonal(
            StateVec::new(1000.0, -3.0, 2000.0, 1.0),
            [100.0, 1.0, 100.0, 1.0],
        )
        .unwrap();
        let ps = belief.sample_particles(100, &mut rng(13)).unwrap();
        let cfg = FilterConfig::new(100).unwrap();
        let a = bearings_only_pf_step(
            &ps,
            0.46,
            &dynamics.transition,
            &Vector4::zeros(),
            &sensor,
            &cfg,
            &mut rng(14),
        )
        .unwrap();
        let b = bootstrap_step(&ps, &0.46, &dynamics, &sensor, &cfg, &mut rng(14)).unwrap();
        assert_eq!(a.set, b.set);

        let ea = bearings_only_ekf_step(
            &belief,
            0.46,
            &dynamics.transition,
            &Vector4::zeros(),
            &sensor,
        )
        .unwrap();
        let pred = ekf_predict(&belief, &dynamics);
        assert!(ea.cov.trace() < pred.cov.trace());
        let own = OwnshipState(StateVec::new(5.0, 1.0, -7.0, 2.0));
        assert_eq!(absolute_from_relative(&ea.mean, &own), ea.mean + own.0);
    }

    #[test]
    fn config_validation() {
        assert!(FilterConfig::new(0).is_err());
        let mut c = FilterConfig::new(10).unwrap();
        assert_eq!(c.n_thr, 5.0);
        c.n_thr = 11.0;
        assert!(c.validate().is_err());
        c.n_thr = 0.5;
        assert!(c.validate().is_err());
    }
}

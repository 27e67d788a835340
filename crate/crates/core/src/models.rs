//! Kinematic and measurement models shared by every filter.
//!
//! States are planar `(x, vx, y, vy)` vectors in SI units. Two bearing
//! conventions coexist and are deliberately exposed as separate functions:
//! [`range_bearing`] measures counter-clockwise from the +x axis
//! (`atan2(dy, dx)`), while [`bearing_north_clockwise`] measures clockwise
//! from North (`atan2(dx, dy)`), as used for ship-borne bearings-only tracking.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Planar kinematic state `(x, vx, y, vy)`.
pub type StateVec = Vector4<f64>;

/// Below this turn rate the coordinated-turn matrix falls back to its
/// constant-velocity limit.
pub const TURN_RATE_EPS: f64 = 1e-9;

/// Metres per second in one knot.
pub const KNOT: f64 = 0.514444;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Position part of a state.
pub fn position(x: &StateVec) -> Vector2<f64> {
    Vector2::new(x[0], x[2])
}

/// Velocity part of a state.
pub fn velocity(x: &StateVec) -> Vector2<f64> {
    Vector2::new(x[1], x[3])
}

pub fn is_finite_state(x: &StateVec) -> bool {
    x.iter().all(|v| v.is_finite())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum MotionKind {
    /// Constant velocity.
    Cv,
    /// Coordinated turn; positive rates turn counter-clockwise.
    Ct { turn_rate: f64 },
}

/// A discrete-time transition model with fixed sampling period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionModel {
    pub kind: MotionKind,
    pub step: f64,
}

impl TransitionModel {
    pub fn new(kind: MotionKind, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "step must be positive, got {step}"
            )));
        }
        if let MotionKind::Ct { turn_rate } = kind {
            if !turn_rate.is_finite() {
                return Err(Error::InvalidArgument("turn rate must be finite".into()));
            }
        }
        Ok(Self { kind, step })
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        match self.kind {
            MotionKind::Cv => cv_fixed(self.step),
            MotionKind::Ct { turn_rate } => ct_fixed(turn_rate, self.step),
        }
    }
}

fn cv_fixed(t: f64) -> Matrix4<f64> {
    Matrix4::new(
        1.0, t, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, t, //
        0.0, 0.0, 0.0, 1.0,
    )
}

fn ct_fixed(omega: f64, t: f64) -> Matrix4<f64> {
    if omega.abs() < TURN_RATE_EPS {
        return cv_fixed(t);
    }
    let (s, c) = (omega * t).sin_cos();
    let a = s / omega;
    let b = (1.0 - c) / omega;
    Matrix4::new(
        1.0, a, 0.0, -b, //
        0.0, c, 0.0, -s, //
        0.0, b, 1.0, a, //
        0.0, s, 0.0, c,
    )
}

/// Constant-velocity transition matrix.
pub fn cv_matrix(t: f64) -> Result<Matrix4<f64>> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {t}"
        )));
    }
    Ok(cv_fixed(t))
}

/// Coordinated-turn transition matrix with turn rate `omega` (rad/s).
///
/// For `|omega| < 1e-9` the analytic limit (the CV matrix) is returned.
pub fn ct_matrix(omega: f64, t: f64) -> Result<Matrix4<f64>> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {t}"
        )));
    }
    if !omega.is_finite() {
        return Err(Error::InvalidArgument("turn rate must be finite".into()));
    }
    Ok(ct_fixed(omega, t))
}

/// A symmetric positive-semidefinite 4x4 process noise covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessNoise {
    cov: Matrix4<f64>,
}

impl ProcessNoise {
    pub fn new(cov: Matrix4<f64>) -> Result<Self> {
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "process noise must be finite".into(),
            ));
        }
        let scale = cov.abs().max().max(1.0);
        if (cov - cov.transpose()).abs().max() > 1e-12 * scale {
            return Err(Error::InvalidArgument(
                "process noise must be symmetric".into(),
            ));
        }
        let eig = cov.symmetric_eigenvalues();
        if eig.min() < -1e-12 * scale {
            return Err(Error::InvalidArgument(format!(
                "process noise must be positive semidefinite (min eigenvalue {})",
                eig.min()
            )));
        }
        Ok(Self { cov })
    }

    pub fn diagonal(d: [f64; 4]) -> Result<Self> {
        Self::new(Matrix4::from_diagonal(&Vector4::from(d)))
    }

    pub fn zero() -> Self {
        Self {
            cov: Matrix4::zeros(),
        }
    }

    pub fn cov(&self) -> &Matrix4<f64> {
        &self.cov
    }
}

/// Discretised continuous white-noise acceleration covariance.
///
/// Each axis gets the block `sigma^2 * [[T^3/3, T^2/2], [T^2/2, T]]`.
pub fn white_noise_q(sigma_x: f64, sigma_y: f64, t: f64) -> Result<ProcessNoise> {
    if sigma_x < 0.0 || sigma_y < 0.0 || !sigma_x.is_finite() || !sigma_y.is_finite() {
        return Err(Error::InvalidArgument(
            "noise intensities must be non-negative".into(),
        ));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {t}"
        )));
    }
    let block = |s: f64| {
        let s2 = s * s;
        (s2 * t.powi(3) / 3.0, s2 * t * t / 2.0, s2 * t)
    };
    let (ax, bx, cx) = block(sigma_x);
    let (ay, by, cy) = block(sigma_y);
    ProcessNoise::new(Matrix4::new(
        ax, bx, 0.0, 0.0, //
        bx, cx, 0.0, 0.0, //
        0.0, 0.0, ay, by, //
        0.0, 0.0, by, cy,
    ))
}

/// Lower Cholesky factor of a PSD matrix, retrying once with a
/// `1e-12 * trace` diagonal jitter.
pub fn psd_cholesky(cov: &Matrix4<f64>) -> Result<Matrix4<f64>> {
    if cov.iter().all(|v| *v == 0.0) {
        return Ok(Matrix4::zeros());
    }
    if let Some(ch) = cov.cholesky() {
        return Ok(ch.l());
    }
    let jitter = 1e-12 * cov.trace().abs();
    let jittered = cov + Matrix4::identity() * jitter;
    jittered
        .cholesky()
        .map(|ch| ch.l())
        .ok_or_else(|| Error::Numeric("covariance is not positive semidefinite".into()))
}

/// Draws `N(0, I)` in four dimensions.
pub fn standard_normal4<R: Rng + ?Sized>(rng: &mut R) -> Vector4<f64> {
    Vector4::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// Returns `F x + w`, `w ~ N(0, Q)`.
pub fn propagate_sample<R: Rng + ?Sized>(
    x: &StateVec,
    f: &Matrix4<f64>,
    q: &ProcessNoise,
    rng: &mut R,
) -> Result<StateVec> {
    let l = psd_cholesky(q.cov())?;
    Ok(f * x + l * standard_normal4(rng))
}

const LOG_2PI: f64 = 1.837_877_066_409_345_3;

/// `log N(x_next; F x_prev, Q)`; `Q` must be strictly positive definite.
pub fn transition_logpdf(
    x_next: &StateVec,
    x_prev: &StateVec,
    f: &Matrix4<f64>,
    q: &ProcessNoise,
) -> Result<f64> {
    let ch = q
        .cov()
        .cholesky()
        .ok_or_else(|| Error::Numeric("transition density needs a positive-definite Q".into()))?;
    Ok(gaussian_logpdf_chol(&(x_next - f * x_prev), &ch.l()))
}

fn gaussian_logpdf_chol(resid: &Vector4<f64>, l: &Matrix4<f64>) -> f64 {
    let z = l
        .solve_lower_triangular(resid)
        .expect("cholesky factor has a non-zero diagonal");
    let log_det: f64 = (0..4).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    -0.5 * (z.norm_squared() + log_det + 4.0 * LOG_2PI)
}

/// A linear-Gaussian transition `x' = F x + w` with cached factors.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussian {
    f: Matrix4<f64>,
    q: ProcessNoise,
    chol: Matrix4<f64>,
    /// Present only when `Q` is positive definite.
    pd_chol: Option<Matrix4<f64>>,
}

impl LinearGaussian {
    pub fn new(f: Matrix4<f64>, q: ProcessNoise) -> Result<Self> {
        let chol = psd_cholesky(q.cov())?;
        let pd_chol = q.cov().cholesky().map(|c| c.l());
        Ok(Self {
            f,
            q,
            chol,
            pd_chol,
        })
    }

    pub fn from_model(model: &TransitionModel, q: ProcessNoise) -> Result<Self> {
        Self::new(model.matrix(), q)
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.f
    }

    pub fn noise(&self) -> &ProcessNoise {
        &self.q
    }

    pub fn mean(&self, x: &StateVec) -> StateVec {
        self.f * x
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: &StateVec, rng: &mut R) -> StateVec {
        self.f * x + self.chol * standard_normal4(rng)
    }

    pub fn log_density(&self, x_next: &StateVec, x_prev: &StateVec) -> Result<f64> {
        let l = self.pd_chol.as_ref().ok_or_else(|| {
            Error::Numeric("transition density needs a positive-definite Q".into())
        })?;
        Ok(gaussian_logpdf_chol(&(x_next - self.f * x_prev), l))
    }
}

/// Sensor location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorPose {
    pub x0: f64,
    pub y0: f64,
}

impl SensorPose {
    pub fn new(x0: f64, y0: f64) -> Self {
        Self { x0, y0 }
    }

    pub fn origin() -> Self {
        Self { x0: 0.0, y0: 0.0 }
    }
}

/// Independent range and bearing noise standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementNoise {
    pub sigma_r: f64,
    pub sigma_theta: f64,
}

impl MeasurementNoise {
    pub fn new(sigma_r: f64, sigma_theta: f64) -> Result<Self> {
        if !(sigma_r > 0.0 && sigma_theta > 0.0) {
            return Err(Error::InvalidArgument(
                "measurement noise standard deviations must be positive".into(),
            ));
        }
        Ok(Self {
            sigma_r,
            sigma_theta,
        })
    }

    pub fn cov(&self) -> Matrix2<f64> {
        Matrix2::new(self.sigma_r.powi(2), 0.0, 0.0, self.sigma_theta.powi(2))
    }
}

/// A range/bearing measurement; bearing is counter-clockwise from +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeBearing {
    pub range: f64,
    pub bearing: f64,
}

impl RangeBearing {
    pub fn new(range: f64, bearing: f64) -> Self {
        Self { range, bearing }
    }

    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.range, self.bearing)
    }
}

/// Range and math-convention bearing of `x` seen from `s`.
pub fn range_bearing(x: &StateVec, s: &SensorPose) -> Result<RangeBearing> {
    let dx = x[0] - s.x0;
    let dy = x[2] - s.y0;
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::DegenerateGeometry(
            "target coincides with sensor".into(),
        ));
    }
    Ok(RangeBearing::new(dx.hypot(dy), dy.atan2(dx)))
}

/// `range_bearing` without the degeneracy check; coincident points give `(0, 0)`.
pub(crate) fn range_bearing_unchecked(x: &StateVec, s: &SensorPose) -> RangeBearing {
    let dx = x[0] - s.x0;
    let dy = x[2] - s.y0;
    RangeBearing::new(dx.hypot(dy), dy.atan2(dx))
}

/// Independent-Gaussian log-density of a range/bearing measurement, with the
/// bearing residual wrapped into `(-pi, pi]`.
pub fn measurement_logpdf(
    z: &RangeBearing,
    x: &StateVec,
    s: &SensorPose,
    noise: &MeasurementNoise,
) -> f64 {
    let pred = range_bearing_unchecked(x, s);
    let er = (z.range - pred.range) / noise.sigma_r;
    let et = wrap_angle(z.bearing - pred.bearing) / noise.sigma_theta;
    -0.5 * (er * er + et * et) - (2.0 * PI * noise.sigma_r * noise.sigma_theta).ln()
}

/// Sensor with its noise model, evaluating range/bearing likelihoods.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeBearingSensor {
    pub pose: SensorPose,
    pub noise: MeasurementNoise,
}

impl RangeBearingSensor {
    pub fn new(pose: SensorPose, noise: MeasurementNoise) -> Self {
        Self { pose, noise }
    }

    pub fn log_likelihood(&self, z: &RangeBearing, x: &StateVec) -> f64 {
        measurement_logpdf(z, x, &self.pose, &self.noise)
    }

    pub fn predict(&self, x: &StateVec) -> RangeBearing {
        range_bearing_unchecked(x, &self.pose)
    }
}

/// Bearing measured clockwise from North, `atan2(x, y)`, in `(-pi, pi]`.
pub fn bearing_north_clockwise(rel: &StateVec) -> Result<f64> {
    if rel[0] == 0.0 && rel[2] == 0.0 {
        return Err(Error::DegenerateGeometry(
            "relative position is zero".into(),
        ));
    }
    Ok(rel[0].atan2(rel[2]))
}

/// Gaussian bearings-only likelihood in the North-clockwise convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BearingOnlySensor {
    pub sigma_theta: f64,
}

impl BearingOnlySensor {
    pub fn new(sigma_theta: f64) -> Result<Self> {
        if !(sigma_theta > 0.0) {
            return Err(Error::InvalidArgument(
                "bearing noise must be positive".into(),
            ));
        }
        Ok(Self { sigma_theta })
    }

    pub fn log_likelihood(&self, bearing: f64, rel: &StateVec) -> f64 {
        let pred = rel[0].atan2(rel[2]);
        let e = wrap_angle(bearing - pred) / self.sigma_theta;
        -0.5 * e * e - (self.sigma_theta * (2.0 * PI).sqrt()).ln()
    }
}

/// Ownship kinematic state, same layout as [`StateVec`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OwnshipState(pub StateVec);

impl OwnshipState {
    /// Builds a state from a position and a North-clockwise course (rad) and speed.
    pub fn from_course_speed(x: f64, y: f64, course: f64, speed: f64) -> Self {
        let (s, c) = course.sin_cos();
        OwnshipState(StateVec::new(x, speed * s, y, speed * c))
    }

    pub fn course(&self) -> f64 {
        self.0[1].atan2(self.0[3])
    }

    pub fn speed(&self) -> f64 {
        self.0[1].hypot(self.0[3])
    }
}

/// Deterministic input removing the ownship's velocity change from the
/// relative-state prediction: `x_k = F x_{k-1} + w - U`.
///
/// Only the velocity slots are non-zero.
pub fn ownship_input(own_now: &OwnshipState, own_prev: &OwnshipState) -> Vector4<f64> {
    Vector4::new(
        0.0,
        own_now.0[1] - own_prev.0[1],
        0.0,
        own_now.0[3] - own_prev.0[3],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cv_matrix_layout() {
        let f = cv_matrix(1.0).unwrap();
        let expected = Matrix4::new(
            1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0,
        );
        assert_eq!(f, expected);
        assert!(cv_matrix(0.0).is_err());
        assert!(cv_matrix(-1.0).is_err());
        let tiny = cv_matrix(1e-9).unwrap();
        assert!((tiny - Matrix4::identity()).abs().max() < 1e-8);
        let moved = cv_matrix(2.0).unwrap() * StateVec::new(0.0, 1.0, 0.0, 2.0);
        assert_eq!(moved, StateVec::new(2.0, 1.0, 4.0, 2.0));
    }

    #[test]
    fn ct_matrix_limits_and_entries() {
        let f = ct_matrix(1e-12, 1.0).unwrap();
        assert!((f - cv_matrix(1.0).unwrap()).abs().max() < 1e-6);
        let f = ct_matrix(1e-9, 1.0).unwrap();
        assert!((f - cv_matrix(1.0).unwrap()).abs().max() < 1e-6);
        let f = ct_matrix(1.1e-9, 1.0).unwrap();
        assert!((f - cv_matrix(1.0).unwrap()).abs().max() < 1e-6);

        let w = PI / 2.0;
        let f = ct_matrix(w, 1.0).unwrap();
        assert!((f[(0, 1)] - 2.0 / PI).abs() < 1e-15);
        assert!((f[(0, 3)] + 2.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn ct_preserves_speed_and_rotates_velocity() {
        let f = ct_matrix(0.1641, 1.0).unwrap();
        let x = StateVec::new(3.0, 1.0, -2.0, 1.5);
        let y = f * x;
        assert!((velocity(&y).norm() - velocity(&x).norm()).abs() < 1e-10);
        let det = f[(1, 1)] * f[(3, 3)] - f[(1, 3)] * f[(3, 1)];
        assert!((det - 1.0).abs() < 1e-12);
        let turned = wrap_angle(y[3].atan2(y[1]) - x[3].atan2(x[1]));
        assert!((turned - 0.1641).abs() < 1e-12);
    }

    #[test]
    fn white_noise_blocks() {
        let q = white_noise_q(0.0, 0.0, 1.0).unwrap();
        assert_eq!(*q.cov(), Matrix4::zeros());
        let q = white_noise_q(5e-2, 5e-2, 1.0).unwrap();
        let s2 = 2.5e-3;
        let c = q.cov();
        assert!((c[(0, 0)] - s2 / 3.0).abs() < 1e-18);
        assert!((c[(0, 1)] - s2 / 2.0).abs() < 1e-18);
        assert!((c[(1, 1)] - s2).abs() < 1e-18);
        assert!((c[(2, 2)] - s2 / 3.0).abs() < 1e-18);
        assert_eq!(c[(0, 2)], 0.0);
        let q = white_noise_q(5e-4, 5e-4, 1.28).unwrap();
        assert!(q.cov().symmetric_eigenvalues().min() >= -1e-12);
        assert!(white_noise_q(-1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn propagate_zero_noise_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = StateVec::new(1.0, 2.0, 3.0, 4.0);
        let y =
            propagate_sample(&x, &Matrix4::identity(), &ProcessNoise::zero(), &mut rng).unwrap();
        assert_eq!(x, y);
        let f = cv_matrix(2.0).unwrap();
        let y = propagate_sample(&x, &f, &ProcessNoise::zero(), &mut rng).unwrap();
        assert_eq!(y, f * x);
    }

    #[test]
    fn propagate_sample_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = ct_matrix(0.3, 1.0).unwrap();
        let q = ProcessNoise::new(Matrix4::new(
            2.0, 0.5, 0.0, 0.1, 0.5, 1.0, 0.0, 0.0, 0.0, 0.0, 3.0, 0.4, 0.1, 0.0, 0.4, 0.5,
        ))
        .unwrap();
        let x = StateVec::new(10.0, 1.0, -5.0, 2.0);
        let n = 100_000;
        let draws: Vec<StateVec> = (0..n)
            .map(|_| propagate_sample(&x, &f, &q, &mut rng).unwrap())
            .collect();
        let mean = draws.iter().sum::<StateVec>() / n as f64;
        let expected = f * x;
        for i in 0..4 {
            let se = (q.cov()[(i, i)] / n as f64).sqrt();
            assert!((mean[i] - expected[i]).abs() < 4.0 * se, "component {i}");
        }
        let mut cov = Matrix4::zeros();
        for d in &draws {
            let e = d - mean;
            cov += e * e.transpose();
        }
        cov /= (n - 1) as f64;
        assert!((cov - q.cov()).norm() / q.cov().norm() < 0.1);
    }

    #[test]
    fn transition_logpdf_mode_and_monotone() {
        let f = cv_matrix(1.0).unwrap();
        let q = ProcessNoise::new(Matrix4::identity()).unwrap();
        let xp = StateVec::new(1.0, 2.0, 3.0, 4.0);
        let lp = transition_logpdf(&(f * xp), &xp, &f, &q).unwrap();
        assert!((lp - (2.0 * PI).powi(-2).ln()).abs() < 1e-12);
        let dir = StateVec::new(0.3, -0.2, 0.5, 0.1);
        let mut last = lp;
        for k in 1..20 {
            let v = transition_logpdf(&(f * xp + dir * k as f64), &xp, &f, &q).unwrap();
            assert!(v < last);
            last = v;
        }
        assert!(transition_logpdf(&xp, &xp, &f, &ProcessNoise::zero()).is_err());
    }

    #[test]
    fn transition_logpdf_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let a = Matrix4::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let cov = a * a.transpose() + Matrix4::identity() * 0.5;
            let cov = (cov + cov.transpose()) * 0.5;
            let q = ProcessNoise::new(cov).unwrap();
            let f = ct_matrix(rng.random_range(-0.5..0.5), rng.random_range(0.1..2.0)).unwrap();
            let xp = StateVec::from_fn(|_, _| rng.random_range(-10.0..10.0));
            let xn = StateVec::from_fn(|_, _| rng.random_range(-10.0..10.0));
            let r = xn - f * xp;
            let inv = cov.try_inverse().unwrap();
            let naive = -0.5 * (r.transpose() * inv * r)[(0, 0)]
                - 0.5 * cov.determinant().ln()
                - 2.0 * (2.0 * PI).ln();
            let got = transition_logpdf(&xn, &xp, &f, &q).unwrap();
            assert!((got - naive).abs() < 1e-10, "{got} vs {naive}");
        }
    }

    #[test]
    fn range_bearing_cases() {
        let s = SensorPose::origin();
        let z = range_bearing(&StateVec::new(100.0, 0.0, 0.0, 0.0), &s).unwrap();
        assert_eq!((z.range, z.bearing), (100.0, 0.0));
        let z = range_bearing(&StateVec::new(0.0, 0.0, 100.0, 0.0), &s).unwrap();
        assert!((z.range - 100.0).abs() < 1e-12 && (z.bearing - PI / 2.0).abs() < 1e-15);
        let z = range_bearing(
            &StateVec::new(-50.0, 0.0, 50.0, 0.0),
            &SensorPose::new(-45.0, -45.0),
        )
        .unwrap();
        assert!((z.range - 9050f64.sqrt()).abs() < 1e-12);
        assert!((z.bearing - 95f64.atan2(-5.0)).abs() < 1e-15);
        assert!(range_bearing(
            &StateVec::new(1.0, 0.0, 2.0, 0.0),
            &SensorPose::new(1.0, 2.0)
        )
        .is_err());
    }

    #[test]
    fn measurement_logpdf_mode_and_wrap() {
        let s = SensorPose::origin();
        let noise = MeasurementNoise::new(2.0, 0.1).unwrap();
        let x = StateVec::new(30.0, 0.0, 40.0, 0.0);
        let z = range_bearing(&x, &s).unwrap();
        let lp = measurement_logpdf(&z, &x, &s, &noise);
        assert!((lp - (1.0 / (2.0 * PI * 2.0 * 0.1)).ln()).abs() < 1e-12);

        // bearing pi-0.01 against a prediction of -pi+0.01: residual is 0.02 rad
        let x = StateVec::new(-100.0, 0.0, -100.0 * (0.01f64).tan(), 0.0);
        let pred = range_bearing(&x, &s).unwrap();
        assert!((pred.bearing - (-PI + 0.01)).abs() < 1e-12);
        let z = RangeBearing::new(pred.range, PI - 0.01);
        let lp = measurement_logpdf(&z, &x, &s, &noise);
        let expected = -0.5 * (0.02f64 / 0.1).powi(2) - (2.0 * PI * 2.0 * 0.1).ln();
        assert!((lp - expected).abs() < 1e-9);

        for k in [-3i32, -1, 1, 2, 5] {
            let shifted = RangeBearing::new(z.range, z.bearing + 2.0 * PI * k as f64);
            assert!((measurement_logpdf(&shifted, &x, &s, &noise) - lp).abs() < 1e-12);
        }
    }

    #[test]
    fn measurement_density_integrates_to_one() {
        // midpoint quadrature over +-8 sigma in both coordinates
        let s = SensorPose::origin();
        let noise = MeasurementNoise::new(3.0, 0.02).unwrap();
        let x = StateVec::new(60.0, 0.0, 25.0, 0.0);
        let pred = range_bearing(&x, &s).unwrap();
        let n = 400;
        let (hr, ht) = (16.0 * 3.0 / n as f64, 16.0 * 0.02 / n as f64);
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let r = pred.range - 8.0 * 3.0 + (i as f64 + 0.5) * hr;
                let t = pred.bearing - 8.0 * 0.02 + (j as f64 + 0.5) * ht;
                total +=
                    measurement_logpdf(&RangeBearing::new(r, t), &x, &s, &noise).exp() * hr * ht;
            }
        }
        assert!((total - 1.0).abs() < 0.01, "{total}");
    }

    #[test]
    fn north_clockwise_bearing() {
        assert_eq!(
            bearing_north_clockwise(&StateVec::new(0.0, 0.0, 100.0, 0.0)).unwrap(),
            0.0
        );
        let b = bearing_north_clockwise(&StateVec::new(100.0, 0.0, 0.0, 0.0)).unwrap();
        assert!((b - PI / 2.0).abs() < 1e-15);
        let brg = 265f64.to_radians();
        let rel = StateVec::new(4000.0 * brg.sin(), 0.0, 4000.0 * brg.cos(), 0.0);
        let got = bearing_north_clockwise(&rel).unwrap().rem_euclid(2.0 * PI);
        assert!((got.to_degrees() - 265.0).abs() < 1e-9);
        assert!(bearing_north_clockwise(&StateVec::zeros()).is_err());
    }

    #[test]
    fn ownship_input_velocity_deltas() {
        let a = OwnshipState::from_course_speed(0.0, 0.0, PI, 12.0 * KNOT);
        assert_eq!(ownship_input(&a, &a), Vector4::zeros());
        let b = OwnshipState::from_course_speed(10.0, -40.0, 115f64.to_radians(), 12.0 * KNOT);
        let u = ownship_input(&b, &a);
        let v = 12.0 * KNOT;
        let (s115, c115) = 115f64.to_radians().sin_cos();
        assert!((u[1] - (v * s115 - v * PI.sin())).abs() < 1e-12);
        assert!((u[3] - (v * c115 - v * PI.cos())).abs() < 1e-12);
        assert_eq!((u[0], u[2]), (0.0, 0.0));
        assert!((b.course() - 115f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!((wrap_angle(0.1 + 4.0 * PI) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn linear_gaussian_consistency() {
        let q = white_noise_q(0.5, 0.5, 1.0).unwrap();
        let lg = LinearGaussian::from_model(&TransitionModel::new(MotionKind::Cv, 1.0).unwrap(), q)
            .unwrap();
        let xp = StateVec::new(1.0, 1.0, 1.0, 1.0);
        let xn = StateVec::new(2.5, 0.7, 1.8, 1.2);
        let a = lg.log_density(&xn, &xp).unwrap();
        let b = transition_logpdf(&xn, &xp, lg.matrix(), &q).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}

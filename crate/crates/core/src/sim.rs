//! Scenario description and synthetic truth/measurement generation.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jpda::association::AssociationModel;
use crate::jpda::filter::{ObservationFrame, Observer};
use crate::jpda::hypothesis::M2THypothesis;
use crate::models::{
    bearing_north_clockwise, range_bearing_unchecked, white_noise_q, wrap_angle, LinearGaussian,
    MeasurementNoise, MotionKind, OwnshipState, RangeBearing, RangeBearingSensor, SensorPose,
    StateVec, TransitionModel, KNOT,
};

/// A motion model held for `duration` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSegment {
    #[serde(flatten)]
    pub model: MotionKind,
    pub duration: usize,
}

/// Initial target state, either Cartesian or polar relative to the first
/// sensor (ownship) with North-clockwise angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetStart {
    State([f64; 4]),
    Polar {
        range: f64,
        bearing_deg: f64,
        course_deg: f64,
        speed_knots: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub start: TargetStart,
    pub segments: Vec<MotionSegment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub position: [f64; 2],
    pub sigma_range: f64,
    pub sigma_bearing: f64,
    #[serde(default = "unbounded")]
    pub max_range: f64,
}

fn unbounded() -> f64 {
    f64::INFINITY
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionSpec {
    #[serde(default = "one")]
    pub p_detect: f64,
    #[serde(default)]
    pub clutter_rate: f64,
    /// Targets beyond the sensor's maximum range go undetected.
    #[serde(default)]
    pub range_limited: bool,
}

impl Default for DetectionSpec {
    fn default() -> Self {
        Self {
            p_detect: 1.0,
            clutter_rate: 0.0,
            range_limited: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OwnshipLeg {
    pub course_deg: f64,
    pub duration: usize,
}

/// Ownship starting at `position`, sailing each leg at constant speed; the
/// course changes instantly between legs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OwnshipSchedule {
    #[serde(default)]
    pub position: [f64; 2],
    pub speed_knots: f64,
    pub legs: Vec<OwnshipLeg>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BearingsOnlySpec {
    pub sigma_bearing: f64,
    pub ownship: OwnshipSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub step: f64,
    /// White-noise acceleration intensities `(sigma_x, sigma_y)` of the truth.
    #[serde(default)]
    pub truth_sigma: [f64; 2],
    pub targets: Vec<TargetSpec>,
    #[serde(default)]
    pub sensors: Vec<SensorSpec>,
    #[serde(default)]
    pub detection: DetectionSpec,
    #[serde(default)]
    pub bearings_only: Option<BearingsOnlySpec>,
}

impl Scenario {
    pub fn horizon(&self) -> usize {
        self.targets
            .first()
            .map_or(0, |t| t.segments.iter().map(|s| s.duration).sum())
    }

    /// Motion model that moves target `k` from step `t - 1` to `t`.
    pub fn motion_at(&self, k: usize, t: usize) -> MotionKind {
        segment_at(&self.targets[k].segments, t)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("scenario '{}': {m}", self.name)));
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad("step must be positive".into());
        }
        if self
            .truth_sigma
            .iter()
            .any(|s| !(*s >= 0.0 && s.is_finite()))
        {
            return bad("truth noise must be non-negative".into());
        }
        if self.targets.is_empty() {
            return bad("no targets".into());
        }
        let h = self.horizon();
        if h == 0 {
            return bad("empty motion schedule".into());
        }
        for (k, t) in self.targets.iter().enumerate() {
            if t.segments.iter().any(|s| s.duration == 0) {
                return bad(format!("target {k} has a zero-length segment"));
            }
            if t.segments.iter().map(|s| s.duration).sum::<usize>() != h {
                return bad(format!("target {k} schedule length differs from target 0"));
            }
            if let Some(s) = t
                .segments
                .iter()
                .find(|s| TransitionModel::new(s.model, self.step).is_err())
            {
                return bad(format!("target {k} has an invalid segment {s:?}"));
            }
        }
        let d = &self.detection;
        if !(0.0..=1.0).contains(&d.p_detect)
            || !(d.clutter_rate >= 0.0 && d.clutter_rate.is_finite())
        {
            return bad("detection probability or clutter rate out of range".into());
        }
        for (i, s) in self.sensors.iter().enumerate() {
            if !(s.sigma_range > 0.0 && s.sigma_bearing > 0.0) {
                return bad(format!("sensor {i} noise must be positive"));
            }
            if !(s.max_range > 0.0) || (d.clutter_rate > 0.0 && !s.max_range.is_finite()) {
                return bad(format!(
                    "sensor {i} needs a finite positive max_range when clutter is simulated"
                ));
            }
        }
        match &self.bearings_only {
            Some(b) => {
                if self.targets.len() != 1 {
                    return bad("bearings-only scenarios track a single target".into());
                }
                if !(b.sigma_bearing >= 0.0) {
                    return bad("bearing noise must be non-negative".into());
                }
                if b.ownship.legs.iter().map(|l| l.duration).sum::<usize>() != h {
                    return bad("ownship schedule length differs from the target schedule".into());
                }
            }
            None => {
                if self.sensors.is_empty() {
                    return bad("no sensors".into());
                }
            }
        }
        Ok(())
    }

    pub fn observers(&self) -> Result<Vec<Observer>> {
        self.sensors
            .iter()
            .map(|s| {
                Ok(Observer {
                    sensor: s.sensor()?,
                    association: AssociationModel::with_max_range(
                        self.detection.p_detect,
                        self.detection.clutter_rate,
                        s.max_range,
                    )
                    .map_err(|e| {
                        Error::Config(format!(
                            "sensor needs a finite max_range for association: {e}"
                        ))
                    })?,
                })
            })
            .collect()
    }

    /// Initial true state of every target. Polar starts are placed relative
    /// to the ownship start (or the first sensor, or the origin).
    pub fn initial_states(&self) -> Vec<StateVec> {
        let origin = match (&self.bearings_only, self.sensors.first()) {
            (Some(b), _) => b.ownship.position,
            (None, Some(s)) => s.position,
            (None, None) => [0.0, 0.0],
        };
        self.targets
            .iter()
            .map(|t| match t.start {
                TargetStart::State(s) => StateVec::from(s),
                TargetStart::Polar {
                    range,
                    bearing_deg,
                    course_deg,
                    speed_knots,
                } => {
                    let (sb, cb) = bearing_deg.to_radians().sin_cos();
                    let (sc, cc) = course_deg.to_radians().sin_cos();
                    let v = speed_knots * KNOT;
                    StateVec::new(
                        origin[0] + range * sb,
                        v * sc,
                        origin[1] + range * cb,
                        v * cc,
                    )
                }
            })
            .collect()
    }
}

impl SensorSpec {
    pub fn sensor(&self) -> Result<RangeBearingSensor> {
        Ok(RangeBearingSensor::new(
            SensorPose::new(self.position[0], self.position[1]),
            MeasurementNoise::new(self.sigma_range, self.sigma_bearing)?,
        ))
    }
}

/// `states[t][k]` for `t = 0..=horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthLog {
    pub step: f64,
    pub states: Vec<Vec<StateVec>>,
}

impl TruthLog {
    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn target_track(&self, k: usize) -> Vec<StateVec> {
        self.states.iter().map(|s| s[k]).collect()
    }
}

/// A frame with the hidden origin of each measurement: target (1-based) or
/// 0 for clutter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelledFrame {
    pub frame: ObservationFrame,
    pub labels: Vec<usize>,
}

impl LabelledFrame {
    pub fn hypothesis(&self, targets: usize) -> Result<M2THypothesis> {
        M2THypothesis::new(self.labels.clone(), targets)
    }

    /// The measurement produced by target `k` (0-based), if any.
    pub fn of_target(&self, k: usize) -> Option<RangeBearing> {
        self.labels
            .iter()
            .position(|l| *l == k + 1)
            .map(|j| self.frame.measurements[j])
    }
}

/// `frames[t - 1][i]` holds observer `i`'s frame at step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementLog {
    pub frames: Vec<Vec<LabelledFrame>>,
}

impl MeasurementLog {
    pub fn unlabelled(&self, t: usize) -> Vec<ObservationFrame> {
        self.frames[t - 1].iter().map(|f| f.frame.clone()).collect()
    }
}

fn segment_at(segments: &[MotionSegment], t: usize) -> MotionKind {
    let mut end = 0;
    for s in segments {
        end += s.duration;
        if t <= end {
            return s.model;
        }
    }
    segments.last().map_or(MotionKind::Cv, |s| s.model)
}

/// `x_t = F_seg x_{t-1} + w`, with `w` drawn from the white-noise
/// acceleration model; zero intensities give exact kinematics and draw
/// nothing from `rng`.
pub fn simulate_truth<R: Rng + ?Sized>(sc: &Scenario, rng: &mut R) -> Result<TruthLog> {
    sc.validate()?;
    let q = white_noise_q(sc.truth_sigma[0], sc.truth_sigma[1], sc.step)?;
    let noisy = sc.truth_sigma.iter().any(|s| *s > 0.0);
    let mut states = vec![sc.initial_states()];
    for t in 1..=sc.horizon() {
        let prev = &states[t - 1];
        let mut next = Vec::with_capacity(prev.len());
        for (x, target) in prev.iter().zip(&sc.targets) {
            let model = TransitionModel::new(segment_at(&target.segments, t), sc.step)?;
            let f = model.matrix();
            next.push(if noisy {
                LinearGaussian::new(f, q.clone())?.sample(x, rng)
            } else {
                f * x
            });
        }
        states.push(next);
    }
    Ok(TruthLog {
        step: sc.step,
        states,
    })
}

/// One frame per observer per step: each target detected with probability
/// `P_D`, Poisson clutter uniform over `[0, R_max] x (-pi, pi]`, measurement
/// order shuffled.
pub fn simulate_observations<R: Rng + ?Sized>(
    truth: &TruthLog,
    sc: &Scenario,
    rng: &mut R,
) -> Result<MeasurementLog> {
    sc.validate()?;
    let d = &sc.detection;
    let clutter = if d.clutter_rate > 0.0 {
        Some(Poisson::new(d.clutter_rate).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let sensors: Vec<RangeBearingSensor> = sc
        .sensors
        .iter()
        .map(|s| s.sensor())
        .collect::<Result<_>>()?;
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut frames = Vec::with_capacity(truth.horizon());
    for t in 1..=truth.horizon() {
        let mut per_observer = Vec::with_capacity(sensors.len());
        for (i, (sensor, spec)) in sensors.iter().zip(&sc.sensors).enumerate() {
            let mut items: Vec<(RangeBearing, usize)> = Vec::new();
            for (k, x) in truth.states[t].iter().enumerate() {
                let detected = rng.random::<f64>() < d.p_detect;
                let p = range_bearing_unchecked(x, &sensor.pose);
                if !detected || (d.range_limited && p.range > spec.max_range) {
                    continue;
                }
                let r = p.range + sensor.noise.sigma_r * std_normal.sample(rng);
                let b = wrap_angle(p.bearing + sensor.noise.sigma_theta * std_normal.sample(rng));
                items.push((RangeBearing::new(r, b), k + 1));
            }
            if let Some(pois) = &clutter {
                let n = pois.sample(rng) as usize;
                for _ in 0..n {
                    let r = spec.max_range * rng.random::<f64>();
                    let b = PI - 2.0 * PI * rng.random::<f64>();
                    items.push((RangeBearing::new(r, b), 0));
                }
            }
            items.shuffle(rng);
            let (measurements, labels) = items.into_iter().unzip();
            per_observer.push(LabelledFrame {
                frame: ObservationFrame {
                    observer: i,
                    measurements,
                },
                labels,
            });
        }
        frames.push(per_observer);
    }
    Ok(MeasurementLog { frames })
}

/// Ownship states `o_0..o_H`: `o_t` has the velocity of the leg containing
/// step `t` (leg 0 for `t = 0`) and the position reached by sailing
/// `o_{t-1}`'s velocity for one step.
pub fn ownship_track(schedule: &OwnshipSchedule, step: f64) -> Vec<OwnshipState> {
    let speed = schedule.speed_knots * KNOT;
    let mut courses = Vec::new();
    if let Some(first) = schedule.legs.first() {
        courses.push(first.course_deg.to_radians());
    }
    for leg in &schedule.legs {
        courses.extend(std::iter::repeat_n(
            leg.course_deg.to_radians(),
            leg.duration,
        ));
    }
    let mut out: Vec<OwnshipState> = Vec::with_capacity(courses.len());
    for c in &courses {
        let (x, y) = match out.last() {
            None => (schedule.position[0], schedule.position[1]),
            Some(p) => (p.0[0] + step * p.0[1], p.0[2] + step * p.0[3]),
        };
        out.push(OwnshipState::from_course_speed(x, y, *c, speed));
    }
    out
}

/// Noisy North-clockwise bearings of `target[t] - ownship[t]` for every
/// `t >= 1`, wrapped into `(-pi, pi]`.
pub fn simulate_bearings_only<R: Rng + ?Sized>(
    target: &[StateVec],
    ownship: &[OwnshipState],
    sigma_bearing: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if target.len() != ownship.len() {
        return Err(Error::InvalidArgument(format!(
            "{} target states but {} ownship states",
            target.len(),
            ownship.len()
        )));
    }
    if !(sigma_bearing >= 0.0) {
        return Err(Error::InvalidArgument(
            "bearing noise must be non-negative".into(),
        ));
    }
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    target
        .iter()
        .zip(ownship)
        .skip(1)
        .map(|(x, o)| {
            let b = bearing_north_clockwise(&(x - o.0))?;
            Ok(if sigma_bearing > 0.0 {
                wrap_angle(b + sigma_bearing * noise.sample(rng))
            } else {
                b
            })
        })
        .collect()
}

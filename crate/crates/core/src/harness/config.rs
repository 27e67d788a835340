//! Experiment files: a scenario plus tracker settings in one TOML document.

use std::path::Path;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{Dynamics, FilterConfig, GaussianBelief};
use crate::jpda::association::GateParams;
use crate::mmpf::ModeTransitionMatrix;
use crate::models::{
    white_noise_q, LinearGaussian, MotionKind, ProcessNoise, StateVec, TransitionModel,
};
use crate::particles::{IndexSampler, ResampleScheme, RougheningParams, RougheningScale};
use crate::sim::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Ekf,
    /// Transitional-prior SIS with threshold resampling; one filter per target.
    Pf,
    /// Resampling every step; targets stacked into one joint state.
    Bootstrap,
    Ippf,
    Mmpf,
    Mcjpdaf,
    Mcmmjpdaf,
}

impl FilterKind {
    pub const ALL: [FilterKind; 7] = [
        FilterKind::Ekf,
        FilterKind::Pf,
        FilterKind::Bootstrap,
        FilterKind::Ippf,
        FilterKind::Mmpf,
        FilterKind::Mcjpdaf,
        FilterKind::Mcmmjpdaf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Ekf => "ekf",
            FilterKind::Pf => "pf",
            FilterKind::Bootstrap => "bootstrap",
            FilterKind::Ippf => "ippf",
            FilterKind::Mmpf => "mmpf",
            FilterKind::Mcjpdaf => "mcjpdaf",
            FilterKind::Mcmmjpdaf => "mcmmjpdaf",
        }
    }

    /// Filters that are handed each target's own measurement.
    pub fn needs_association(self) -> bool {
        !matches!(self, FilterKind::Mcjpdaf | FilterKind::Mcmmjpdaf)
    }

    pub fn is_multiple_model(self) -> bool {
        matches!(self, FilterKind::Mmpf | FilterKind::Mcmmjpdaf)
    }
}

impl std::str::FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown filter '{s}'")))
    }
}

/// Filter process noise: a diagonal covariance or white-noise intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    Diagonal([f64; 4]),
    WhiteNoise([f64; 2]),
}

impl NoiseSpec {
    pub fn process_noise(&self, step: f64) -> Result<ProcessNoise> {
        match *self {
            NoiseSpec::Diagonal(d) => ProcessNoise::diagonal(d),
            NoiseSpec::WhiteNoise([sx, sy]) => white_noise_q(sx, sy, step),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Per-target prior means; the true initial states when absent.
    #[serde(default)]
    pub means: Option<Vec<[f64; 4]>>,
    pub variances: [f64; 4],
}

fn default_roughening() -> f64 {
    0.2
}

fn default_divergence() -> f64 {
    50.0
}

fn default_models() -> Vec<MotionKind> {
    vec![MotionKind::Cv]
}

fn default_runs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerConfig {
    pub filter: FilterKind,
    pub particles: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Resampling threshold on the effective sample size; `particles / 2`
    /// when absent.
    #[serde(default)]
    pub n_thr: Option<f64>,
    #[serde(default = "default_roughening")]
    pub roughening_k: f64,
    #[serde(default)]
    pub roughening_scale: RougheningScale,
    #[serde(default)]
    pub resample: ResampleScheme,
    #[serde(default)]
    pub index_sampler: IndexSampler,
    /// Gate threshold on the squared Mahalanobis distance.
    #[serde(default)]
    pub gate_chi2: Option<f64>,
    /// Gate significance; converted to a threshold when `gate_chi2` is absent.
    #[serde(default)]
    pub gate_alpha: Option<f64>,
    #[serde(default = "default_divergence")]
    pub divergence_threshold: f64,
    /// Motion models. Single-model filters use the first entry.
    #[serde(default = "default_models")]
    pub models: Vec<MotionKind>,
    #[serde(default)]
    pub mode_transition: Vec<Vec<f64>>,
    #[serde(default)]
    pub initial_modes: Vec<f64>,
    /// One entry shared by every target, or one per target.
    pub process_noise: Vec<NoiseSpec>,
    pub prior: PriorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub tracker: TrackerConfig,
}

/// Command-line style overrides applied on top of a file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub filter: Option<FilterKind>,
    pub particles: Option<usize>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_toml(src: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&src)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(f) = o.filter {
            self.tracker.filter = f;
        }
        if let Some(n) = o.particles {
            self.tracker.particles = n;
            if self.tracker.n_thr.is_some_and(|t| t > n as f64) {
                self.tracker.n_thr = None;
            }
        }
        if let Some(r) = o.runs {
            self.tracker.runs = r;
        }
        if let Some(s) = o.seed {
            self.tracker.seed = s;
        }
        self.validate()
    }

    pub fn targets(&self) -> usize {
        self.scenario.targets.len()
    }

    /// True when every frame carries exactly one measurement per target and
    /// the filter may be handed the association.
    pub fn pre_associated(&self) -> bool {
        let d = &self.scenario.detection;
        self.scenario.bearings_only.is_some()
            || (d.p_detect == 1.0 && d.clutter_rate == 0.0 && self.scenario.sensors.len() == 1)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        let t = &self.tracker;
        let kind = t.filter;
        let cfg_err = |m: String| Err(Error::Config(m));
        if t.runs == 0 {
            return cfg_err("runs must be at least 1".into());
        }
        if kind != FilterKind::Ekf {
            self.filter_config()?;
        }
        if !(t.divergence_threshold > 0.0) {
            return cfg_err("divergence threshold must be positive".into());
        }
        if kind.needs_association() && !self.pre_associated() {
            return cfg_err(format!(
                "filter '{}' needs one measurement per target from a single sensor; scenario '{}' has clutter, missed detections or several sensors",
                kind.name(),
                self.scenario.name
            ));
        }
        if !kind.needs_association() && self.scenario.bearings_only.is_some() {
            return cfg_err(format!(
                "filter '{}' needs range/bearing sensors",
                kind.name()
            ));
        }
        if self.scenario.bearings_only.is_some()
            && !matches!(
                kind,
                FilterKind::Ekf | FilterKind::Pf | FilterKind::Bootstrap
            )
        {
            return cfg_err(format!(
                "filter '{}' does not support bearings-only scenarios",
                kind.name()
            ));
        }
        if !kind.needs_association() && self.pre_associated() {
            return cfg_err(format!(
                "scenario '{}' is pre-associated; use a filter that takes associated measurements",
                self.scenario.name
            ));
        }
        if t.models.is_empty() {
            return cfg_err("at least one motion model is required".into());
        }
        if kind.is_multiple_model() {
            self.mode_transition()?;
            if t.initial_modes.len() != t.models.len() {
                return cfg_err("one initial mode probability per model required".into());
            }
        }
        let k = self.targets();
        if kind == FilterKind::Mcmmjpdaf && t.process_noise.len() != 1 {
            return cfg_err(
                "mcmmjpdaf shares its motion models between targets; give one process_noise entry"
                    .into(),
            );
        }
        if t.process_noise.len() != 1 && t.process_noise.len() != k {
            return cfg_err(format!("process_noise needs 1 or {k} entries"));
        }
        if let Some(m) = &t.prior.means {
            if m.len() != k {
                return cfg_err(format!("prior.means needs {k} entries"));
            }
        }
        self.priors()?;
        self.dynamics_per_target()?;
        self.gate()?;
        Ok(())
    }

    pub fn filter_config(&self) -> Result<FilterConfig> {
        let t = &self.tracker;
        let mut cfg = FilterConfig::new(t.particles).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(thr) = t.n_thr {
            cfg.n_thr = thr;
        }
        cfg.roughening =
            RougheningParams::new(t.roughening_k).map_err(|e| Error::Config(e.to_string()))?;
        cfg.roughening.scale = t.roughening_scale;
        cfg.resample_scheme = t.resample;
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn gate(&self) -> Result<GateParams> {
        let r = match (self.tracker.gate_chi2, self.tracker.gate_alpha) {
            (Some(c), _) => GateParams::new(c),
            (None, Some(a)) => GateParams::from_significance(a),
            (None, None) => Ok(GateParams::default()),
        };
        r.map_err(|e| Error::Config(e.to_string()))
    }

    pub fn mode_transition(&self) -> Result<ModeTransitionMatrix> {
        let m = ModeTransitionMatrix::new(self.tracker.mode_transition.clone())
            .map_err(|e| Error::Config(e.to_string()))?;
        if m.regimes() != self.tracker.models.len() {
            return Err(Error::Config(
                "mode_transition must be square with one row per model".into(),
            ));
        }
        Ok(m)
    }

    fn noise_for(&self, k: usize) -> Result<ProcessNoise> {
        let specs = &self.tracker.process_noise;
        specs[if specs.len() == 1 { 0 } else { k }]
            .process_noise(self.scenario.step)
            .map_err(|e| Error::Config(e.to_string()))
    }

    fn dynamics_for(&self, kind: MotionKind, k: usize) -> Result<Dynamics> {
        let model = TransitionModel::new(kind, self.scenario.step)
            .map_err(|e| Error::Config(e.to_string()))?;
        let lg = LinearGaussian::from_model(&model, self.noise_for(k)?)
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(Dynamics::new(lg))
    }

    /// Single-model dynamics of each target (first configured model).
    pub fn dynamics_per_target(&self) -> Result<Vec<Dynamics>> {
        (0..self.targets())
            .map(|k| self.dynamics_for(self.tracker.models[0], k))
            .collect()
    }

    /// `[target][regime]` dynamics for multiple-model filters.
    pub fn regime_dynamics(&self) -> Result<Vec<Vec<Dynamics>>> {
        (0..self.targets())
            .map(|k| {
                self.tracker
                    .models
                    .iter()
                    .map(|m| self.dynamics_for(*m, k))
                    .collect()
            })
            .collect()
    }

    /// Prior beliefs over the filtered state (relative to the ownship for
    /// bearings-only scenarios).
    pub fn priors(&self) -> Result<Vec<GaussianBelief>> {
        let truth = self.scenario.initial_states();
        let own = self.scenario.bearings_only.as_ref().and_then(|b| {
            crate::sim::ownship_track(&b.ownship, self.scenario.step)
                .first()
                .copied()
        });
        let means: Vec<StateVec> = match &self.tracker.prior.means {
            Some(m) => m.iter().map(|v| StateVec::from(*v)).collect(),
            None => truth,
        };
        means
            .into_iter()
            .map(|m| {
                let m = own.map_or(m, |o| m - o.0);
                GaussianBelief::new(
                    m,
                    Matrix4::from_diagonal(&self.tracker.prior.variances.into()),
                )
                .map_err(|e| Error::Config(format!("prior: {e}")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[scenario]
name = "one"
step = 1.0
targets = [{ start = [100.0, 20.0, 100.0, 20.0], segments = [{ model = "cv", duration = 5 }] }]
sensors = [{ position = [0.0, 0.0], sigma_range = 3.0, sigma_bearing = 1.0 }]

[tracker]
filter = "pf"
particles = 100
runs = 3
seed = 7
process_noise = [{ diagonal = [5.0, 1.0, 5.0, 1.0] }]
prior = { variances = [100.0, 10.0, 100.0, 10.0] }
"#;

    #[test]
    fn parses_and_applies_defaults() {
        let cfg = ExperimentConfig::from_toml(BASE).unwrap();
        assert_eq!(cfg.tracker.filter, FilterKind::Pf);
        assert_eq!(cfg.tracker.roughening_k, 0.2);
        assert_eq!(cfg.tracker.divergence_threshold, 50.0);
        assert_eq!(cfg.filter_config().unwrap().n_thr, 50.0);
        assert_eq!(cfg.gate().unwrap().chi2_threshold, 9.21);
        assert!(cfg.pre_associated());
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides() {
        let mut cfg = ExperimentConfig::from_toml(BASE).unwrap();
        cfg.apply(&Overrides {
            filter: Some(FilterKind::Ekf),
            particles: Some(10),
            runs: Some(1),
            seed: Some(3),
        })
        .unwrap();
        assert_eq!(
            (
                cfg.tracker.filter,
                cfg.tracker.particles,
                cfg.tracker.runs,
                cfg.tracker.seed
            ),
            (FilterKind::Ekf, 10, 1, 3)
        );
        assert!(cfg
            .apply(&Overrides {
                runs: Some(0),
                ..Default::default()
            })
            .is_err());
        assert_eq!(
            "mcmmjpdaf".parse::<FilterKind>().unwrap(),
            FilterKind::Mcmmjpdaf
        );
        assert!("kalman".parse::<FilterKind>().is_err());
    }

    #[test]
    fn filter_scenario_mismatch() {
        let mut cfg = ExperimentConfig::from_toml(BASE).unwrap();
        let e = cfg.apply(&Overrides {
            filter: Some(FilterKind::Mcjpdaf),
            ..Default::default()
        });
        assert!(matches!(e, Err(Error::Config(m)) if m.contains("pre-associated")));

        let mut cfg = ExperimentConfig::from_toml(BASE).unwrap();
        cfg.scenario.detection.clutter_rate = 1.0;
        cfg.scenario.sensors[0].max_range = 500.0;
        assert!(
            matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("one measurement per target"))
        );

        let mut cfg = ExperimentConfig::from_toml(BASE).unwrap();
        cfg.tracker.filter = FilterKind::Mmpf;
        assert!(cfg.validate().is_err());
        cfg.tracker.models = vec![MotionKind::Cv, MotionKind::Ct { turn_rate: -0.1 }];
        cfg.tracker.mode_transition = vec![vec![0.9, 0.1], vec![0.3, 0.7]];
        cfg.tracker.initial_modes = vec![0.5, 0.5];
        cfg.validate().unwrap();
        assert_eq!(cfg.regime_dynamics().unwrap()[0].len(), 2);
    }

    #[test]
    fn malformed_files() {
        assert!(matches!(
            ExperimentConfig::from_toml("x = 1"),
            Err(Error::Config(_))
        ));
        let bad = BASE.replace("particles = 100", "particles = 0");
        assert!(matches!(
            ExperimentConfig::from_toml(&bad),
            Err(Error::Config(_))
        ));
        let bad = BASE.replace("[{ diagonal = [5.0, 1.0, 5.0, 1.0] }]", "[{ diagonal = [5.0, 1.0, 5.0, 1.0] }, { white_noise = [1.0, 1.0] }, { white_noise = [1.0, 1.0] }]");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }
}

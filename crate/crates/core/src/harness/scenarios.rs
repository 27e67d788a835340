//! Experiment files shipped with the library.

use std::path::Path;

use super::config::ExperimentConfig;
use crate::error::{Error, Result};

pub const BUNDLED: &[(&str, &str)] = &[
    (
        "ch3_single",
        include_str!("../../scenarios/ch3_single.toml"),
    ),
    (
        "ch4_two_target",
        include_str!("../../scenarios/ch4_two_target.toml"),
    ),
    (
        "ch5_maneuver",
        include_str!("../../scenarios/ch5_maneuver.toml"),
    ),
    ("ch6_easy", include_str!("../../scenarios/ch6_easy.toml")),
    (
        "ch6_nominal",
        include_str!("../../scenarios/ch6_nominal.toml"),
    ),
    (
        "ch6_medium",
        include_str!("../../scenarios/ch6_medium.toml"),
    ),
    (
        "ch6_difficult",
        include_str!("../../scenarios/ch6_difficult.toml"),
    ),
    (
        "ch7_mmjpdaf",
        include_str!("../../scenarios/ch7_mmjpdaf.toml"),
    ),
    (
        "fielddata_replica",
        include_str!("../../scenarios/fielddata_replica.toml"),
    ),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn bundled(name: &str) -> Option<Result<ExperimentConfig>> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, src)| ExperimentConfig::from_toml(src))
}

/// A bundled experiment by name, otherwise a file path.
pub fn load(name_or_path: &str) -> Result<ExperimentConfig> {
    if let Some(cfg) = bundled(name_or_path) {
        return cfg;
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        return Err(Error::Config(format!(
            "'{name_or_path}' is neither a bundled scenario ({}) nor a file",
            names().collect::<Vec<_>>().join(", ")
        )));
    }
    ExperimentConfig::from_file(path)
}

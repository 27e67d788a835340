use std::fs;

use tracklab::harness::output::{parse_metrics, write_outputs};
use tracklab::harness::{run_monte_carlo, scenarios, ExperimentConfig, FilterKind, Overrides};
use tracklab::Error;

fn small(name: &str, filter: Option<FilterKind>, runs: usize) -> ExperimentConfig {
    let mut cfg = scenarios::load(name).unwrap();
    cfg.apply(&Overrides { filter, runs: Some(runs), particles: Some(60), seed: Some(9) }).unwrap();
    cfg
}

fn outputs(cfg: &ExperimentConfig) -> (String, String, String) {
    let dir = tempfile::tempdir().unwrap();
    let (report, runs) = run_monte_carlo(cfg).unwrap();
    write_outputs(dir.path(), cfg, &report, &runs).unwrap();
    let read = |f: &str| fs::read_to_string(dir.path().join(f)).unwrap();
    (read("tracks.csv"), read("mse.csv"), read("metrics.json"))
}

#[test]
fn reruns_write_identical_files() {
    for (name, filter) in [
        ("ch3_single", FilterKind::Pf),
        ("ch4_two_target", FilterKind::Ippf),
        ("ch5_maneuver", FilterKind::Mmpf),
        ("ch6_nominal", FilterKind::Mcjpdaf),
        ("ch7_mmjpdaf", FilterKind::Mcmmjpdaf),
        ("fielddata_replica", FilterKind::Ekf),
    ] {
        let cfg = small(name, Some(filter), 3);
        let (t1, m1, j1) = outputs(&cfg);
        let (t2, m2, j2) = outputs(&cfg);
        assert_eq!(t1, t2, "{name}");
        assert_eq!(m1, m2, "{name}");
        let mut a = parse_metrics(&j1).unwrap();
        let mut b = parse_metrics(&j2).unwrap();
        a.wall_clock_s = 0.0;
        b.wall_clock_s = 0.0;
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn written_files_have_expected_shape() {
    let cfg = small("ch5_maneuver", None, 2);
    let (tracks, mse, json) = outputs(&cfg);
    let header = tracks.lines().next().unwrap();
    assert_eq!(
        header,
        "run,t,target,true_x,true_y,true_vx,true_vy,est_x,est_y,est_vx,est_vy,cov_trace,mode_prob_1,mode_prob_2"
    );
    let steps = cfg.scenario.horizon();
    assert_eq!(tracks.lines().count(), 1 + 2 * steps);
    assert_eq!(mse.lines().count(), 1 + steps);
    let report = parse_metrics(&json).unwrap();
    assert_eq!(report.runs, 2);
    assert_eq!(report.mse[0].len(), steps);
    assert!(report.mode_probs.is_some());
}

#[test]
fn single_run_is_supported() {
    let cfg = small("ch6_easy", None, 1);
    let (report, runs) = run_monte_carlo(&cfg).unwrap();
    assert_eq!(runs.len(), 1);
    assert_eq!(report.final_errors.len(), 1);
    assert!(report.mse.iter().flatten().all(|v| v.is_finite()));
}

#[test]
fn every_filter_sees_the_same_data() {
    let pf = small("ch3_single", Some(FilterKind::Pf), 2);
    let ekf = small("ch3_single", Some(FilterKind::Ekf), 2);
    let (_, a) = run_monte_carlo(&pf).unwrap();
    let (_, b) = run_monte_carlo(&ekf).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.truth, y.truth);
    }
}

#[test]
fn seeds_change_results() {
    let a = small("ch3_single", None, 2);
    let mut b = a.clone();
    b.tracker.seed += 1;
    let (ra, _) = run_monte_carlo(&a).unwrap();
    let (rb, _) = run_monte_carlo(&b).unwrap();
    assert_ne!(ra.mse, rb.mse);
}

#[test]
fn incompatible_filters_are_rejected() {
    let mut cfg = scenarios::load("ch3_single").unwrap();
    let err = cfg.apply(&Overrides { filter: Some(FilterKind::Mcjpdaf), ..Default::default() }).unwrap_err();
    assert!(matches!(&err, Error::Config(m) if m.contains("pre-associated")), "{err}");

    let mut cfg = scenarios::load("ch6_nominal").unwrap();
    let err = cfg.apply(&Overrides { filter: Some(FilterKind::Pf), ..Default::default() }).unwrap_err();
    assert!(matches!(&err, Error::Config(m) if m.contains("one measurement per target")), "{err}");

    let mut cfg = scenarios::load("fielddata_replica").unwrap();
    assert!(cfg.apply(&Overrides { filter: Some(FilterKind::Ippf), ..Default::default() }).is_err());
}

#[test]
fn experiment_files_round_trip_through_toml() {
    for name in scenarios::names() {
        let cfg = scenarios::load(name).unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg, "{name}");
    }
}

#[test]
fn files_load_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    let cfg = scenarios::load("ch5_maneuver").unwrap();
    fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    assert_eq!(scenarios::load(path.to_str().unwrap()).unwrap(), cfg);
    assert!(scenarios::load("no_such_scenario").is_err());
}

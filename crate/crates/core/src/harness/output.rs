//! `metrics.json`, `tracks.csv` and `mse.csv`.

use std::fs;
use std::path::Path;

use super::config::ExperimentConfig;
use super::run::{MetricsReport, RunResult};
use crate::error::{Error, Result};

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

/// One row per (run, step, target).
pub fn tracks_csv(cfg: &ExperimentConfig, runs: &[RunResult]) -> Result<String> {
    let s = cfg.tracker.models.len();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = [
        "run",
        "t",
        "target",
        "true_x",
        "true_y",
        "true_vx",
        "true_vy",
        "est_x",
        "est_y",
        "est_vx",
        "est_vy",
        "cov_trace",
    ]
    .iter()
    .map(|h| h.to_string())
    .collect();
    header.extend((1..=s).map(|i| format!("mode_prob_{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for r in runs {
        for (t, (truth, est)) in r.truth.iter().zip(&r.estimates).enumerate() {
            for (k, (x, e)) in truth.iter().zip(est).enumerate() {
                let mut row = vec![r.run.to_string(), (t + 1).to_string(), (k + 1).to_string()];
                for v in [x[0], x[2], x[1], x[3]] {
                    row.push(v.to_string());
                }
                for v in [e.state[0], e.state[2], e.state[1], e.state[3], e.cov_trace] {
                    row.push(v.to_string());
                }
                for i in 0..s {
                    row.push(e.mode_probs.get(i).map_or(String::new(), |p| p.to_string()));
                }
                w.write_record(&row).map_err(csv_err)?;
            }
        }
    }
    finish(w)
}

/// One row per (step, target) with the position MSE and RMSE.
pub fn mse_csv(report: &MetricsReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t", "target", "mse", "rmse"])
        .map_err(csv_err)?;
    let steps = report.mse.first().map_or(0, |m| m.len());
    for t in 0..steps {
        for (k, m) in report.mse.iter().enumerate() {
            w.write_record([
                (t + 1).to_string(),
                (k + 1).to_string(),
                m[t].to_string(),
                m[t].sqrt().to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

pub fn metrics_json(report: &MetricsReport) -> Result<String> {
    serde_json::to_string_pretty(report).map_err(|e| Error::Io(e.to_string()))
}

pub fn parse_metrics(json: &str) -> Result<MetricsReport> {
    serde_json::from_str(json).map_err(|e| Error::Io(e.to_string()))
}

pub fn write_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    report: &MetricsReport,
    runs: &[RunResult],
) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.json"), metrics_json(report)?)?;
    fs::write(dir.join("tracks.csv"), tracks_csv(cfg, runs)?)?;
    fs::write(dir.join("mse.csv"), mse_csv(report)?)?;
    Ok(())
}

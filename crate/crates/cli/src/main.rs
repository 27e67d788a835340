//! `track`: run tracking experiments and inspect association hypotheses.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;
use tracklab::harness::{self, output, scenarios, FilterKind, Overrides};
use tracklab::jpda::hypothesis::{all_hypotheses, hypothesis_count, m2t_from_t2m};
use tracklab::Error;

#[derive(Parser)]
#[command(name = "track", version, about = "Particle-filter multi-target tracking experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo experiment and write metrics.json, tracks.csv and mse.csv.
    Run {
        /// Bundled scenario name or path to an experiment file.
        #[arg(long)]
        config: String,
        #[arg(long)]
        filter: Option<FilterKind>,
        #[arg(long)]
        particles: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Bundled scenarios.
    Scenarios {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
    /// Reference computations for cross-checking.
    Oracle {
        #[command(subcommand)]
        command: OracleCommand,
    },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    List,
    /// Print a bundled experiment file.
    Show { name: String },
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Enumerate every association hypothesis for K targets and M measurements as JSON.
    Assoc {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        m: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Io(_) => 1,
        _ => 3,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, filter, particles, runs, seed, out } => {
            let mut cfg = scenarios::load(&config)?;
            cfg.apply(&Overrides { filter, particles, runs, seed })?;
            info!("running {} with {} ({} runs)", cfg.scenario.name, cfg.tracker.filter.name(), cfg.tracker.runs);
            let (report, results) = harness::run_monte_carlo(&cfg)?;
            output::write_outputs(&out, &cfg, &report, &results)?;
            println!(
                "{} / {}: time-avg RMSE {:?}, diverged runs {}/{}, swapped runs {}, {:.2} s",
                report.scenario,
                report.filter.name(),
                report.time_avg_rmse.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
                report.diverged_runs,
                report.runs,
                report.swapped_runs,
                report.wall_clock_s
            );
            println!("outputs written to {}", out.display());
        }
        Command::Scenarios { command: ScenarioCommand::List } => {
            for (name, src) in scenarios::BUNDLED {
                let cfg = tracklab::harness::ExperimentConfig::from_toml(src)?;
                println!("{name:<20} {:<10} {}", cfg.tracker.filter.name(), cfg.scenario.description);
            }
        }
        Command::Scenarios { command: ScenarioCommand::Show { name } } => {
            let (_, src) = scenarios::BUNDLED
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| Error::Config(format!("no bundled scenario '{name}'")))?;
            print!("{src}");
        }
        Command::Oracle { command: OracleCommand::Assoc { k, m } } => {
            if k > 6 || m > 6 {
                return Err(Error::Config("enumeration is limited to K, M <= 6".into()));
            }
            let hyps = all_hypotheses(k, m);
            let rows: Vec<serde_json::Value> = hyps
                .iter()
                .map(|h| {
                    let m2t = m2t_from_t2m(h, m)?;
                    Ok(serde_json::json!({
                        "t2m": h.r_tilde,
                        "m2t": m2t.r,
                        "m_target": h.m_target(),
                        "m_clutter": h.m_clutter(),
                    }))
                })
                .collect::<Result<_, Error>>()?;
            let doc = serde_json::json!({ "k": k, "m": m, "count": hypothesis_count(k, m) as u64, "hypotheses": rows });
            println!("{}", serde_json::to_string_pretty(&doc).map_err(|e| Error::Io(e.to_string()))?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

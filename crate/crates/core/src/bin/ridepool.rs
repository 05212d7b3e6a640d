use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use ridepool::cli::{load_report, Scenario};
use ridepool::engine::compare_reports;
use ridepool::network::RoadNetwork;
use ridepool::Error;

/// Worker threads for sweep cells; defaults to the available cores.
const WORKERS_VAR: &str = "RIDEPOOL_WORKERS";

#[derive(Parser)]
#[command(name = "ridepool", version, about = "Ridepooling simulator with demand anticipation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of a scenario's sweep and write its outputs.
    Run { scenario: PathBuf },
    /// Per-zone differences (b - a) between two report.json files, as CSV.
    Compare { a: PathBuf, b: PathBuf },
    /// Cluster a network into zones of radius `t_m` seconds, as CSV.
    Zones { network: PathBuf, t_m: i64 },
    /// Check a scenario without running it.
    Validate { scenario: PathBuf },
}

fn workers() -> anyhow::Result<usize> {
    match std::env::var(WORKERS_VAR) {
        Ok(v) => {
            let n: usize = v.parse().with_context(|| format!("{WORKERS_VAR}={v} is not a count"))?;
            anyhow::ensure!(n > 0, "{WORKERS_VAR} must be positive");
            Ok(n)
        }
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

/// Bad or missing inputs exit with 2, failures while running with 1.
/// Simulation errors never reach here; they fail their own sweep cell.
fn input_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| {
        matches!(
            c.downcast_ref::<Error>(),
            Some(
                Error::Io { .. }
                    | Error::Parse { .. }
                    | Error::Validation(_)
                    | Error::Config(_)
                    | Error::Input(_)
                    | Error::UnknownNode(_)
                    | Error::Csv(_)
                    | Error::Json(_)
            )
        )
    })
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if input_error(&e) { 2 } else { 1 })
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { scenario } => {
            let workers = workers()?;
            let prepared = Scenario::load(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            let results = prepared.run_sweep(workers)?;
            let mut failed = 0;
            for r in &results {
                match r {
                    Ok(c) => println!(
                        "{} rejected {:.4} vht {:.3} wait {:.1} detour {:.1}",
                        c.cell.label(),
                        c.report.rejection_rate,
                        c.report.vht_hours,
                        c.report.mean_wait,
                        c.report.mean_detour
                    ),
                    Err(e) => {
                        failed += 1;
                        eprintln!("cell failed: {e}");
                    }
                }
            }
            println!("wrote {}", prepared.output_dir().join("sweep.csv").display());
            Ok(if failed > 0 { ExitCode::from(1) } else { ExitCode::SUCCESS })
        }
        Command::Compare { a, b } => {
            let ra = load_report(&a).with_context(|| format!("reading {}", a.display()))?;
            let rb = load_report(&b).with_context(|| format!("reading {}", b.display()))?;
            let deltas = compare_reports(&ra, &rb)?;
            let mut w = csv::Writer::from_writer(std::io::stdout());
            for d in deltas {
                w.serialize(d)?;
            }
            w.flush()?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Zones { network, t_m } => {
            let mut net = RoadNetwork::load(&network).with_context(|| format!("loading {}", network.display()))?;
            net.cluster_zones(t_m)?;
            print!("{}", net.zones_csv().expect("zones were just computed"));
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { scenario } => {
            let prepared = Scenario::load(&scenario).with_context(|| format!("loading {}", scenario.display()))?;
            println!("ok: {} cells", prepared.scenario.cells().len());
            Ok(ExitCode::SUCCESS)
        }
    }
}

//! Scenario files and parameter sweeps.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! output = "out/demo"          # relative to the scenario file
//!
//! [source]                     # where network, demand and fleet come from
//! kind = "files"               # or "two_zone" / "circular" with their parameters
//! network = "net.txt"
//! trace = "trace.csv"
//! history = "days"             # optional directory of past days
//! zone_radius = 150
//! horizon = 3600               # optional; defaults to the config horizon
//!
//! [fleet]                      # required for "files", optional otherwise
//! count = 20
//! capacity = 3
//! placement = { kind = "uniform" }
//!
//! [config]                     # any simulation setting; omitted keys keep defaults
//! delta = 60
//!
//! [sweep]                      # cross-product; every list must be non-empty
//! theta = [0.0, 2.0, 6.0]
//! gamma = [0.0]
//! methods = ["basic"]
//! seeds = [1]
//! ```
//!
//! Each cell picks its mode from its `theta` and `gamma`: both zero runs
//! without anticipation, positive `theta` adds rewards, positive `gamma` adds
//! artificial requests.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::demand::{load_history, load_trace, DemandTrace};
use crate::engine::{run, Mode, RunOutput, RunReport, SimConfig};
use crate::error::{Error, Result};
use crate::fleet::{build_fleet, FleetConfig};
use crate::network::{compute_zones, RoadNetwork, Secs, ZonePartition};
use crate::rates::RateMethod;
use crate::scenarios::{circular_city, two_zone, CircularParams, Instance, TwoZoneParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Source {
    Files {
        network: PathBuf,
        trace: PathBuf,
        #[serde(default)]
        history: Option<PathBuf>,
        zone_radius: Secs,
        #[serde(default)]
        horizon: Option<Secs>,
    },
    TwoZone(TwoZoneParams),
    Circular(CircularParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default = "zero_list")]
    pub theta: Vec<f64>,
    #[serde(default = "zero_list")]
    pub gamma: Vec<f64>,
    #[serde(default = "basic_list")]
    pub methods: Vec<RateMethod>,
    #[serde(default = "seed_list")]
    pub seeds: Vec<u64>,
}

fn zero_list() -> Vec<f64> {
    vec![0.0]
}

fn basic_list() -> Vec<RateMethod> {
    vec![RateMethod::Basic]
}

fn seed_list() -> Vec<u64> {
    vec![0]
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep {
            theta: zero_list(),
            gamma: zero_list(),
            methods: basic_list(),
            seeds: seed_list(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub output: PathBuf,
    pub source: Source,
    #[serde(default)]
    pub fleet: Option<FleetConfig>,
    #[serde(default)]
    pub config: SimConfig,
    #[serde(default)]
    pub sweep: Sweep,
}

/// One point of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub method: RateMethod,
    pub theta: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl Cell {
    pub fn mode(&self) -> Mode {
        match (self.theta > 0.0, self.gamma > 0.0) {
            (false, false) => Mode::None,
            (true, false) => Mode::Rewards,
            (false, true) => Mode::Artificial,
            (true, true) => Mode::Both,
        }
    }

    /// Directory name under `<output>/cells`.
    pub fn label(&self) -> String {
        format!("{}_theta{}_gamma{}_seed{}", method_name(self.method), self.theta, self.gamma, self.seed)
    }
}

pub fn method_name(m: RateMethod) -> &'static str {
    match m {
        RateMethod::Basic => "basic",
        RateMethod::Smooth => "smooth",
        RateMethod::ParticleFilter => "particle_filter",
        RateMethod::Historical => "historical",
    }
}

/// Result of one sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: Cell,
    pub report: RunReport,
}

/// Network loaded once for file sources.
struct Loaded {
    net: RoadNetwork,
    zones: ZonePartition,
    trace: DemandTrace,
    history: Vec<DemandTrace>,
}

/// A scenario with its paths resolved against the scenario file's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub scenario: Scenario,
    pub base: PathBuf,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("scenario: {e}")))
    }

    /// Reads and validates a scenario file.
    pub fn load(path: impl AsRef<Path>) -> Result<Prepared> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scenario = Self::parse(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let p = Prepared { scenario, base };
        p.validate()?;
        Ok(p)
    }

    pub fn cells(&self) -> Vec<Cell> {
        let s = &self.sweep;
        let mut out = Vec::new();
        for &method in &s.methods {
            for &theta in &s.theta {
                for &gamma in &s.gamma {
                    for &seed in &s.seeds {
                        out.push(Cell { method, theta, gamma, seed });
                    }
                }
            }
        }
        out
    }

    /// Simulation settings for one cell.
    pub fn cell_config(&self, cell: &Cell) -> SimConfig {
        let mut cfg = self.config.clone();
        cfg.mode = cell.mode();
        cfg.costs.theta = cell.theta;
        if cell.gamma > 0.0 {
            cfg.artificial.gamma = cell.gamma;
        }
        cfg.rates.method = cell.method;
        cfg.seed = cell.seed;
        cfg
    }
}

impl Prepared {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.scenario.output)
    }

    /// Checks sweep axes, cell configurations and that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        let sw = &s.sweep;
        if sw.theta.is_empty() || sw.gamma.is_empty() || sw.methods.is_empty() || sw.seeds.is_empty() {
            return Err(Error::Config("sweep axes must be non-empty".into()));
        }
        if sw.gamma.iter().any(|g| !(*g >= 0.0 && *g < 1.0)) {
            return Err(Error::Config("gamma values must lie in [0, 1)".into()));
        }
        for cell in s.cells() {
            s.cell_config(&cell).validate()?;
        }
        if let Source::Files {
            network,
            trace,
            history,
            ..
        } = &s.source
        {
            for p in [Some(network), Some(trace), history.as_ref()].into_iter().flatten() {
                let full = self.resolve(p);
                if !full.exists() {
                    return Err(Error::io(
                        full,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                    ));
                }
            }
            if s.fleet.is_none() {
                return Err(Error::Config("file sources need a [fleet] table".into()));
            }
        }
        Ok(())
    }

    fn load_files(&self) -> Result<Option<Loaded>> {
        let Source::Files {
            network,
            trace,
            history,
            zone_radius,
            ..
        } = &self.scenario.source
        else {
            return Ok(None);
        };
        let net = RoadNetwork::load(self.resolve(network))?;
        let zones = compute_zones(&net, *zone_radius)?;
        let trace = load_trace(self.resolve(trace), &net)?;
        let history = match history {
            Some(h) => load_history(self.resolve(h), &net)?,
            None => Vec::new(),
        };
        Ok(Some(Loaded {
            net,
            zones,
            trace,
            history,
        }))
    }

    fn synthetic(&self, seed: u64) -> Result<Instance> {
        let mut inst = match &self.scenario.source {
            Source::TwoZone(p) => two_zone(p, seed)?,
            Source::Circular(p) => circular_city(p, seed)?,
            Source::Files { .. } => unreachable!("file sources are loaded once"),
        };
        if let Some(f) = &self.scenario.fleet {
            inst.fleet = FleetConfig {
                seed: f.seed.wrapping_add(seed),
                ..f.clone()
            };
        }
        Ok(inst)
    }

    fn run_cell(&self, loaded: Option<&Loaded>, cell: &Cell) -> Result<(RunOutput, PathBuf)> {
        let cfg = self.scenario.cell_config(cell);
        let dir = self.output_dir().join("cells").join(cell.label());
        match loaded {
            Some(l) => {
                let mut cfg = cfg;
                if let Source::Files { horizon: Some(h), .. } = &self.scenario.source {
                    cfg.horizon = *h;
                }
                let fleet = self.scenario.fleet.as_ref().expect("validated");
                let fleet = FleetConfig {
                    seed: fleet.seed.wrapping_add(cell.seed),
                    ..fleet.clone()
                };
                let vehicles = build_fleet(&fleet, &l.net)?;
                let out = run(&l.net, l.zones.clone(), &l.trace, vehicles, l.history.clone(), cfg)?;
                out.write(&dir, &l.net)?;
                Ok((out, dir))
            }
            None => {
                let inst = self.synthetic(cell.seed)?;
                let vehicles = inst.vehicles()?;
                let out = run(&inst.net, inst.zones.clone(), &inst.trace, vehicles, Vec::new(), cfg)?;
                out.write(&dir, &inst.net)?;
                Ok((out, dir))
            }
        }
    }

    /// Runs every cell on `workers` threads, writing each cell's outputs as it
    /// finishes, then `sweep.csv` with the cells that succeeded. Results come
    /// back in cell order.
    pub fn run_sweep(&self, workers: usize) -> Result<Vec<Result<CellResult>>> {
        use rayon::prelude::*;
        let loaded = self.load_files()?;
        let cells = self.scenario.cells();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        let results: Vec<Result<CellResult>> = pool.install(|| {
            cells
                .par_iter()
                .map(|cell| {
                    let (out, _) = self.run_cell(loaded.as_ref(), cell)?;
                    Ok(CellResult {
                        cell: *cell,
                        report: out.report,
                    })
                })
                .collect()
        });
        let ok: Vec<&CellResult> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
        let dir = self.output_dir();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let p = dir.join("sweep.csv");
        std::fs::write(&p, sweep_csv(ok)).map_err(|e| Error::io(p, e))?;
        Ok(results)
    }
}

#[derive(Serialize)]
struct SweepRow {
    method: &'static str,
    theta: f64,
    gamma: f64,
    seed: u64,
    requests: usize,
    rejection_rate: f64,
    vht_hours: f64,
    mean_wait: f64,
    mean_detour: f64,
    a_posteriori_cost: f64,
    mean_mismatch_end: f64,
}

/// One row per cell: rejection rate, vehicle hours, mean waiting and detour.
pub fn sweep_csv<'a>(results: impl IntoIterator<Item = &'a CellResult>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in results {
        let rep = &r.report;
        w.serialize(SweepRow {
            method: method_name(r.cell.method),
            theta: r.cell.theta,
            gamma: r.cell.gamma,
            seed: r.cell.seed,
            requests: rep.requests,
            rejection_rate: rep.rejection_rate,
            vht_hours: rep.vht_hours,
            mean_wait: rep.mean_wait,
            mean_detour: rep.mean_detour,
            a_posteriori_cost: rep.a_posteriori_cost,
            mean_mismatch_end: rep.mean_mismatch_end,
        })
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

/// Reads a `report.json` written by a run.
pub fn load_report(path: impl AsRef<Path>) -> Result<RunReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cells_cross_product() {
        let s = Scenario::parse(
            r#"
output = "out"
[source]
kind = "two_zone"
requests = 10
[sweep]
theta = [0.0, 2.0]
gamma = [0.0, 0.025]
seeds = [1, 2, 3]
"#,
        )
        .unwrap();
        let cells = s.cells();
        assert_eq!(cells.len(), 12);
        assert_eq!(cells[0].mode(), Mode::None);
        assert_eq!(cells[3].mode(), Mode::Artificial);
        assert_eq!(cells[6].mode(), Mode::Rewards);
        assert_eq!(cells[11].mode(), Mode::Both);
        let cfg = s.cell_config(&cells[11]);
        assert_eq!(cfg.costs.theta, 2.0);
        assert_eq!(cfg.artificial.gamma, 0.025);
        assert_eq!(cfg.seed, 3);
        match &s.source {
            Source::TwoZone(p) => {
                assert_eq!(p.requests, 10);
                assert_eq!(p.side, TwoZoneParams::default().side);
            }
            _ => panic!("wrong source"),
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Scenario::parse("output = \"o\"\nbogus = 1\n[source]\nkind = \"circular\"\n").is_err());
    }

    #[test]
    fn empty_axis_rejected() {
        let s = Scenario::parse("output = \"o\"\n[source]\nkind = \"circular\"\n[sweep]\nseeds = []\n").unwrap();
        let p = Prepared {
            scenario: s,
            base: PathBuf::new(),
        };
        assert!(matches!(p.validate(), Err(Error::Config(_))));
    }
}

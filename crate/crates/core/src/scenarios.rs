//! Synthetic test cities: an imbalanced grid and a circular city.

use serde::{Deserialize, Serialize};

use crate::demand::{generate_synthetic, DemandProfile, DemandTrace};
use crate::error::Result;
use crate::fleet::{build_fleet, FleetConfig, Placement, Vehicle};
use crate::network::{compute_zones, NetworkSpec, Node, RoadNetwork, Secs, ZonePartition};

/// Everything a run needs besides its configuration.
#[derive(Debug)]
pub struct Instance {
    pub net: RoadNetwork,
    pub zones: ZonePartition,
    pub trace: DemandTrace,
    pub fleet: FleetConfig,
}

impl Instance {
    pub fn vehicles(&self) -> Result<Vec<Vehicle>> {
        build_fleet(&self.fleet, &self.net)
    }
}

/// `cols x rows` grid with two-way roads of `edge` seconds; node id `r * cols + c`.
pub fn grid_network(cols: usize, rows: usize, edge: Secs) -> Result<RoadNetwork> {
    split_grid_network(cols, rows, edge, cols, edge)
}

/// Grid whose roads between column `split - 1` and column `split` take
/// `bridge` seconds instead of `edge`.
pub fn split_grid_network(cols: usize, rows: usize, edge: Secs, split: usize, bridge: Secs) -> Result<RoadNetwork> {
    let mut spec = NetworkSpec::default();
    let id = |r: usize, c: usize| (r * cols + c) as u64;
    for r in 0..rows {
        for c in 0..cols {
            spec.node(id(r, c), c as f64, r as f64);
        }
    }
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                let t = if c + 1 == split { bridge } else { edge };
                spec.road(id(r, c), id(r, c + 1), t);
            }
            if r + 1 < rows {
                spec.road(id(r, c), id(r + 1, c), edge);
            }
        }
    }
    RoadNetwork::build(&spec)
}

/// Square grid split into a busy left district and a quiet right one joined
/// by slow bridge roads; most trips start on the left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TwoZoneParams {
    pub side: usize,
    pub edge: Secs,
    /// Columns in the busy district; the bridges sit at its right edge.
    pub hot_columns: usize,
    /// Travel time across a bridge road.
    pub bridge: Secs,
    /// Share of origins in the hot columns.
    pub hot_origin_share: f64,
    /// Share of destinations in the hot columns.
    pub hot_destination_share: f64,
    pub requests: usize,
    pub horizon: Secs,
    pub vehicles: usize,
    pub capacity: u32,
    pub zone_radius: Secs,
}

impl Default for TwoZoneParams {
    fn default() -> Self {
        TwoZoneParams {
            side: 10,
            edge: 40,
            hot_columns: 5,
            bridge: 480,
            hot_origin_share: 0.8,
            hot_destination_share: 0.5,
            requests: 400,
            horizon: 3600,
            vehicles: 20,
            capacity: 3,
            zone_radius: 150,
        }
    }
}

pub fn two_zone(p: &TwoZoneParams, seed: u64) -> Result<Instance> {
    let net = split_grid_network(p.side, p.side, p.edge, p.hot_columns, p.bridge)?;
    let n = net.node_count();
    let (hot, cold): (Vec<Node>, Vec<Node>) = (0..n).partition(|&u| u % p.side < p.hot_columns);
    let profile = DemandProfile::from_regions(
        n,
        &[
            (&hot, p.hot_origin_share, p.hot_destination_share),
            (&cold, 1.0 - p.hot_origin_share, 1.0 - p.hot_destination_share),
        ],
        p.requests,
        p.horizon,
    );
    let trace = generate_synthetic(&profile, seed)?;
    let zones = compute_zones(&net, p.zone_radius)?;
    Ok(Instance {
        net,
        zones,
        trace,
        fleet: FleetConfig {
            count: p.vehicles,
            capacity: p.capacity,
            placement: Placement::Uniform,
            seed: seed.wrapping_add(1),
        },
    })
}

/// Spokes of equal length meet at a center; trips go from spoke tips to the
/// center, so vehicles that deliver there are far from every origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CircularParams {
    pub spokes: usize,
    /// Nodes per spoke, excluding the center.
    pub spoke_nodes: usize,
    pub edge: Secs,
    pub requests: usize,
    pub horizon: Secs,
    pub vehicles: usize,
    pub capacity: u32,
    pub zone_radius: Secs,
}

impl Default for CircularParams {
    fn default() -> Self {
        CircularParams {
            spokes: 8,
            spoke_nodes: 4,
            edge: 120,
            requests: 400,
            horizon: 3600,
            vehicles: 20,
            capacity: 3,
            zone_radius: 150,
        }
    }
}

impl CircularParams {
    /// Travel time from the center to a spoke tip.
    pub fn return_time(&self) -> Secs {
        self.spoke_nodes as Secs * self.edge
    }
}

/// Node 0 is the center; spoke `s` holds nodes `1 + s * spoke_nodes ..`, tip last.
/// Neighbouring tips are joined by a ring road.
pub fn circular_network(p: &CircularParams) -> Result<RoadNetwork> {
    let mut spec = NetworkSpec::default();
    spec.node(0, 0.0, 0.0);
    let id = |s: usize, k: usize| (1 + s * p.spoke_nodes + k) as u64;
    for s in 0..p.spokes {
        let a = std::f64::consts::TAU * s as f64 / p.spokes as f64;
        for k in 0..p.spoke_nodes {
            let r = (k + 1) as f64;
            spec.node(id(s, k), r * a.cos(), r * a.sin());
            let prev = if k == 0 { 0 } else { id(s, k - 1) };
            spec.road(prev, id(s, k), p.edge);
        }
    }
    if p.spokes > 1 && p.spoke_nodes > 0 {
        let tip = p.spoke_nodes - 1;
        for s in 0..p.spokes {
            let t = (s + 1) % p.spokes;
            if t != s && !(p.spokes == 2 && s == 1) {
                spec.road(id(s, tip), id(t, tip), p.edge);
            }
        }
    }
    RoadNetwork::build(&spec)
}

pub fn circular_city(p: &CircularParams, seed: u64) -> Result<Instance> {
    let net = circular_network(p)?;
    let n = net.node_count();
    let tips: Vec<Node> = (0..p.spokes).map(|s| net.node_of((1 + s * p.spoke_nodes + p.spoke_nodes - 1) as u64)).collect::<Result<_>>()?;
    let center = net.node_of(0)?;
    let profile = DemandProfile::circular(n, &tips, center, p.requests, p.horizon);
    let trace = generate_synthetic(&profile, seed)?;
    let zones = compute_zones(&net, p.zone_radius)?;
    Ok(Instance {
        net,
        zones,
        trace,
        fleet: FleetConfig {
            count: p.vehicles,
            capacity: p.capacity,
            placement: Placement::Uniform,
            seed: seed.wrapping_add(1),
        },
    })
}

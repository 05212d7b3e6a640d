//! Road network, shortest travel times, and zone clustering.
//!
//! Nodes carry an external id (as found in the network file) and a dense
//! internal index. Every algorithm in the crate works on the dense index;
//! external ids only appear at file boundaries.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Dense node index.
pub type Node = usize;
/// Integer seconds. All times in the simulator are whole seconds.
pub type Secs = i64;

/// Networks up to this many nodes keep a full all-pairs table in memory.
pub const DENSE_LIMIT: usize = 10_000;

const NO_PRED: u32 = u32::MAX;
const UNREACHABLE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CachePolicy {
    /// Dense all-pairs table when the network is small enough, lazy otherwise.
    Auto,
    Dense,
    Lazy,
}

/// One row of the shortest-path forest: times and predecessors from a source.
#[derive(Debug)]
struct Row {
    dist: Vec<u32>,
    pred: Vec<u32>,
}

#[derive(Debug)]
enum TravelTimes {
    Dense(Vec<Row>),
    Lazy(RwLock<HashMap<Node, Arc<Row>>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathResult {
    pub node_sequence: Vec<Node>,
    pub duration: Secs,
}

/// Result of clustering the nodes around a minimal set of centers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZonePartition {
    /// Center node of each zone, sorted by node index. Zone `z` is `centers[z]`.
    pub centers: Vec<Node>,
    /// Zone index of every node.
    pub zone_of: Vec<usize>,
    pub t_m: Secs,
}

impl ZonePartition {
    pub fn zone_count(&self) -> usize {
        self.centers.len()
    }

    /// Nodes grouped by zone.
    pub fn members(&self) -> Vec<Vec<Node>> {
        let mut out = vec![Vec::new(); self.centers.len()];
        for (u, &z) in self.zone_of.iter().enumerate() {
            out[z].push(u);
        }
        out
    }

    /// A partition that puts every node in its own zone.
    pub fn singletons(n: usize) -> Self {
        ZonePartition {
            centers: (0..n).collect(),
            zone_of: (0..n).collect(),
            t_m: 0,
        }
    }
}

#[derive(Debug)]
pub struct RoadNetwork {
    ids: Vec<u64>,
    coords: Vec<(f64, f64)>,
    index: HashMap<u64, Node>,
    out_edges: Vec<Vec<(Node, Secs)>>,
    edge_count: usize,
    times: TravelTimes,
    zones: Option<ZonePartition>,
}

/// Plain description of a network, before validation.
#[derive(Debug, Clone, Default)]
pub struct NetworkSpec {
    pub nodes: Vec<(u64, f64, f64)>,
    pub edges: Vec<(u64, u64, Secs)>,
}

impl NetworkSpec {
    pub fn node(&mut self, id: u64, x: f64, y: f64) -> &mut Self {
        self.nodes.push((id, x, y));
        self
    }

    pub fn edge(&mut self, from: u64, to: u64, secs: Secs) -> &mut Self {
        self.edges.push((from, to, secs));
        self
    }

    /// Adds both directions of an edge.
    pub fn road(&mut self, a: u64, b: u64, secs: Secs) -> &mut Self {
        self.edge(a, b, secs).edge(b, a, secs)
    }
}

impl RoadNetwork {
    pub fn build(spec: &NetworkSpec) -> Result<Self> {
        Self::build_with(spec, CachePolicy::Auto)
    }

    pub fn build_with(spec: &NetworkSpec, policy: CachePolicy) -> Result<Self> {
        if spec.nodes.is_empty() {
            return Err(Error::Validation("network has no nodes".into()));
        }
        let mut index = HashMap::with_capacity(spec.nodes.len());
        let mut ids = Vec::with_capacity(spec.nodes.len());
        let mut coords = Vec::with_capacity(spec.nodes.len());
        for &(id, x, y) in &spec.nodes {
            if index.insert(id, ids.len()).is_some() {
                return Err(Error::Validation(format!("duplicate node id {id}")));
            }
            ids.push(id);
            coords.push((x, y));
        }
        let n = ids.len();
        let mut out_edges = vec![Vec::new(); n];
        for &(from, to, secs) in &spec.edges {
            if secs <= 0 {
                return Err(Error::Validation(format!(
                    "edge {from}->{to} has non-positive travel time {secs}"
                )));
            }
            let a = *index.get(&from).ok_or(Error::UnknownNode(from))?;
            let b = *index.get(&to).ok_or(Error::UnknownNode(to))?;
            if a != b {
                out_edges[a].push((b, secs));
            }
        }
        for adj in &mut out_edges {
            adj.sort_unstable();
        }
        check_strongly_connected(&out_edges, &ids)?;

        let dense = match policy {
            CachePolicy::Auto => n <= DENSE_LIMIT,
            CachePolicy::Dense => true,
            CachePolicy::Lazy => false,
        };
        let times = if dense {
            let rows = (0..n)
                .into_par_iter()
                .map(|s| dijkstra(&out_edges, s))
                .collect();
            TravelTimes::Dense(rows)
        } else {
            TravelTimes::Lazy(RwLock::new(HashMap::new()))
        };
        Ok(RoadNetwork {
            ids,
            coords,
            index,
            edge_count: spec.edges.len(),
            out_edges,
            times,
            zones: None,
        })
    }

    /// Reads the text network format: `N <id> <x> <y>` and `E <from> <to> <seconds>`
    /// records, `#` comments.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec = parse_network(&text, path)?;
        Self::build(&spec)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (u, &id) in self.ids.iter().enumerate() {
            let (x, y) = self.coords[u];
            let _ = writeln!(s, "N {id} {x} {y}");
        }
        for (u, adj) in self.out_edges.iter().enumerate() {
            for &(w, secs) in adj {
                let _ = writeln!(s, "E {} {} {}", self.ids[u], self.ids[w], secs);
            }
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.times, TravelTimes::Dense(_))
    }

    pub fn external_id(&self, u: Node) -> u64 {
        self.ids[u]
    }

    pub fn node_of(&self, id: u64) -> Result<Node> {
        self.index.get(&id).copied().ok_or(Error::UnknownNode(id))
    }

    pub fn coords(&self, u: Node) -> (f64, f64) {
        self.coords[u]
    }

    pub fn out_edges(&self, u: Node) -> &[(Node, Secs)] {
        &self.out_edges[u]
    }

    /// Shortest travel time by external id.
    pub fn shortest_travel_time(&self, from: u64, to: u64) -> Result<Secs> {
        Ok(self.time(self.node_of(from)?, self.node_of(to)?))
    }

    /// Shortest travel time between dense indices. Hot path.
    #[inline]
    pub fn time(&self, u: Node, w: Node) -> Secs {
        match &self.times {
            TravelTimes::Dense(rows) => rows[u].dist[w] as Secs,
            TravelTimes::Lazy(_) => self.lazy_row(u).dist[w] as Secs,
        }
    }

    fn lazy_row(&self, u: Node) -> Arc<Row> {
        let TravelTimes::Lazy(cache) = &self.times else {
            unreachable!("lazy_row on dense table")
        };
        if let Some(row) = cache.read().expect("poisoned cache").get(&u) {
            return Arc::clone(row);
        }
        let row = Arc::new(dijkstra(&self.out_edges, u));
        cache
            .write()
            .expect("poisoned cache")
            .entry(u)
            .or_insert(row)
            .clone()
    }

    /// Fastest path between two dense indices.
    pub fn path(&self, u: Node, w: Node) -> PathResult {
        let walk = |row: &Row| {
            let mut seq = vec![w];
            let mut cur = w;
            while cur != u {
                cur = row.pred[cur] as Node;
                seq.push(cur);
            }
            seq.reverse();
            PathResult {
                node_sequence: seq,
                duration: row.dist[w] as Secs,
            }
        };
        match &self.times {
            TravelTimes::Dense(rows) => walk(&rows[u]),
            TravelTimes::Lazy(_) => walk(&self.lazy_row(u)),
        }
    }

    /// Largest shortest travel time over all ordered pairs.
    pub fn diameter(&self) -> Secs {
        let n = self.node_count();
        (0..n)
            .flat_map(|u| (0..n).map(move |w| (u, w)))
            .map(|(u, w)| self.time(u, w))
            .max()
            .unwrap_or(0)
    }

    /// Node closest to a planar point (ties to the lowest index).
    pub fn nearest_node(&self, x: f64, y: f64) -> Node {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (u, &(ux, uy)) in self.coords.iter().enumerate() {
            let d = (ux - x).powi(2) + (uy - y).powi(2);
            if d < best_d {
                best_d = d;
                best = u;
            }
        }
        best
    }

    pub fn zones(&self) -> Option<&ZonePartition> {
        self.zones.as_ref()
    }

    pub fn set_zones(&mut self, zones: ZonePartition) {
        assert_eq!(zones.zone_of.len(), self.node_count());
        self.zones = Some(zones);
    }

    /// Clusters the nodes and stores the partition on the network.
    pub fn cluster_zones(&mut self, t_m: Secs) -> Result<&ZonePartition> {
        let zones = compute_zones(self, t_m)?;
        self.zones = Some(zones);
        Ok(self.zones.as_ref().unwrap())
    }

    /// `node_id,zone_id` CSV of the stored partition.
    pub fn zones_csv(&self) -> Option<String> {
        let zones = self.zones.as_ref()?;
        let mut s = String::from("node_id,zone_id\n");
        for (u, &z) in zones.zone_of.iter().enumerate() {
            let _ = writeln!(s, "{},{}", self.ids[u], z);
        }
        Some(s)
    }
}

fn parse_network(text: &str, path: &Path) -> Result<NetworkSpec> {
    let mut spec = NetworkSpec::default();
    let mut edge_lines = Vec::new();
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["N", id, x, y] => {
                let id = id
                    .parse::<u64>()
                    .map_err(|e| err(lineno, format!("bad node id {id:?}: {e}")))?;
                let x = x
                    .parse::<f64>()
                    .map_err(|e| err(lineno, format!("bad x {x:?}: {e}")))?;
                let y = y
                    .parse::<f64>()
                    .map_err(|e| err(lineno, format!("bad y {y:?}: {e}")))?;
                spec.nodes.push((id, x, y));
            }
            ["E", from, to, secs] => {
                let from = from
                    .parse::<u64>()
                    .map_err(|e| err(lineno, format!("bad node id {from:?}: {e}")))?;
                let to = to
                    .parse::<u64>()
                    .map_err(|e| err(lineno, format!("bad node id {to:?}: {e}")))?;
                let t = secs
                    .parse::<f64>()
                    .map_err(|e| err(lineno, format!("bad travel time {secs:?}: {e}")))?;
                if !t.is_finite() || t <= 0.0 {
                    return Err(err(lineno, format!("travel time must be > 0, got {secs}")));
                }
                // whole seconds, never rounded down to zero
                spec.edges.push((from, to, (t.round() as Secs).max(1)));
                edge_lines.push(lineno);
            }
            _ => return Err(err(lineno, format!("unrecognized record {line:?}"))),
        }
    }
    let known: std::collections::HashSet<u64> = spec.nodes.iter().map(|n| n.0).collect();
    for (&(from, to, _), &lineno) in spec.edges.iter().zip(&edge_lines) {
        for id in [from, to] {
            if !known.contains(&id) {
                return Err(err(lineno, format!("edge references undeclared node {id}")));
            }
        }
    }
    Ok(spec)
}

fn dijkstra(out_edges: &[Vec<(Node, Secs)>], source: Node) -> Row {
    let n = out_edges.len();
    let mut dist = vec![UNREACHABLE; n];
    let mut pred = vec![NO_PRED; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0;
    heap.push(Reverse((0u32, source)));
    while let Some(Reverse((d, u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(w, t) in &out_edges[u] {
            let nd = d + t as u32;
            // lower predecessor index wins ties, so paths are reproducible
            if nd < dist[w] || (nd == dist[w] && (u as u32) < pred[w]) {
                let improved = nd < dist[w];
                dist[w] = nd;
                pred[w] = u as u32;
                if improved {
                    heap.push(Reverse((nd, w)));
                }
            }
        }
    }
    Row { dist, pred }
}

fn check_strongly_connected(out_edges: &[Vec<(Node, Secs)>], ids: &[u64]) -> Result<()> {
    let n = out_edges.len();
    let mut rev = vec![Vec::new(); n];
    for (u, adj) in out_edges.iter().enumerate() {
        for &(w, _) in adj {
            rev[w].push(u);
        }
    }
    let reach = |adj: &dyn Fn(Node) -> Vec<Node>| {
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for w in adj(u) {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen
    };
    let fwd = reach(&|u| out_edges[u].iter().map(|e| e.0).collect());
    let bwd = reach(&|u| rev[u].clone());
    if let Some(u) = (0..n).find(|&u| !fwd[u] || !bwd[u]) {
        return Err(Error::Validation(format!(
            "network is not strongly connected: node {} is not mutually reachable with node {}",
            ids[u], ids[0]
        )));
    }
    Ok(())
}

/// Coverage sets: `cover[c]` lists the nodes reachable from candidate center `c`
/// within `t_m`.
fn coverage(net: &RoadNetwork, t_m: Secs) -> Vec<Vec<Node>> {
    let n = net.node_count();
    (0..n)
        .map(|c| (0..n).filter(|&u| net.time(c, u) <= t_m).collect())
        .collect()
}

/// Largest network solved by exact branch-and-bound set cover.
pub const EXACT_COVER_LIMIT: usize = 30;

/// Picks a minimum set of centers covering every node within `t_m` and assigns
/// each node to its nearest center (ties to the lowest center index).
pub fn compute_zones(net: &RoadNetwork, t_m: Secs) -> Result<ZonePartition> {
    if t_m <= 0 {
        return Err(Error::Input(format!("t_M must be positive, got {t_m}")));
    }
    let n = net.node_count();
    let cover = coverage(net, t_m);
    let mut centers = if n <= EXACT_COVER_LIMIT {
        exact_cover(&cover, n)
    } else {
        greedy_cover(&cover, n)
    };
    centers.sort_unstable();
    let zone_of = assign_nearest(net, &centers);
    Ok(ZonePartition {
        centers,
        zone_of,
        t_m,
    })
}

/// Zone index of every node given sorted centers; ties go to the lowest center.
pub(crate) fn assign_nearest(net: &RoadNetwork, centers: &[Node]) -> Vec<usize> {
    (0..net.node_count())
        .map(|u| {
            let mut best = 0;
            for (z, &c) in centers.iter().enumerate() {
                if net.time(c, u) < net.time(centers[best], u) {
                    best = z;
                }
            }
            best
        })
        .collect()
}

/// Greedy set cover: repeatedly take the candidate covering the most
/// uncovered nodes, lowest index on ties.
pub fn greedy_cover(cover: &[Vec<Node>], n: usize) -> Vec<Node> {
    let mut covered = vec![false; n];
    let mut left = n;
    let mut chosen = Vec::new();
    while left > 0 {
        let (best, gain) = cover
            .iter()
            .enumerate()
            .map(|(c, set)| (c, set.iter().filter(|&&u| !covered[u]).count()))
            .fold((0, 0), |acc, x| if x.1 > acc.1 { x } else { acc });
        debug_assert!(gain > 0, "every node covers itself");
        for &u in &cover[best] {
            if !covered[u] {
                covered[u] = true;
                left -= 1;
            }
        }
        chosen.push(best);
    }
    chosen
}

/// Exact minimum set cover by branch and bound over bitmasks (`n <= 64`).
pub fn exact_cover(cover: &[Vec<Node>], n: usize) -> Vec<Node> {
    assert!(n <= 64, "exact cover is limited to 64 nodes");
    let universe: u64 = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    let masks: Vec<u64> = cover
        .iter()
        .map(|set| set.iter().fold(0u64, |m, &u| m | (1 << u)))
        .collect();
    let max_size = masks.iter().map(|m| m.count_ones()).max().unwrap_or(1).max(1);

    struct Search<'a> {
        masks: &'a [u64],
        universe: u64,
        max_size: u32,
        best: Vec<Node>,
        chosen: Vec<Node>,
    }
    impl Search<'_> {
        fn go(&mut self, covered: u64) {
            if covered == self.universe {
                if self.chosen.len() < self.best.len() {
                    self.best = self.chosen.clone();
                }
                return;
            }
            let open = (self.universe & !covered).count_ones();
            let bound = self.chosen.len() + open.div_ceil(self.max_size) as usize;
            if bound >= self.best.len() {
                return;
            }
            // branch on the uncovered node with the fewest covering candidates
            let mut pick = usize::MAX;
            let mut pick_count = u32::MAX;
            let mut rest = self.universe & !covered;
            while rest != 0 {
                let u = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                let count = self.masks.iter().filter(|&&m| m >> u & 1 == 1).count() as u32;
                if count < pick_count {
                    pick = u;
                    pick_count = count;
                }
            }
            for c in 0..self.masks.len() {
                if self.masks[c] >> pick & 1 == 1 {
                    self.chosen.push(c);
                    self.go(covered | self.masks[c]);
                    self.chosen.pop();
                }
            }
        }
    }

    let mut search = Search {
        masks: &masks,
        universe,
        max_size,
        best: greedy_cover(cover, n),
        chosen: Vec::new(),
    };
    search.go(0);
    search.best
}

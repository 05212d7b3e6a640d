//! Trip-vehicle candidates and the assignment that picks among them.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::{Request, RequestId};
use crate::fleet::VehicleId;
use crate::network::{Node, RoadNetwork, Secs};
use crate::rates::RateField;
use crate::routing::{best_route, Constraints, CostParams, RoutedMatch, VehicleSnapshot};

/// Costs enter the solver as integer nanodollars so objective ties are exact.
pub const NANOS_PER_DOLLAR: f64 = 1e9;

pub fn to_nanos(c: f64) -> i64 {
    (c * NANOS_PER_DOLLAR).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnumerationConfig {
    /// Share of the cheapest single-request candidates kept per request.
    pub keep_fraction: f64,
    /// Largest trip size considered (further capped by vehicle capacity).
    pub max_trip_size: usize,
    /// Stop growing a vehicle's trips once it has this many candidates.
    pub max_candidates_per_vehicle: usize,
}

impl Default for EnumerationConfig {
    fn default() -> Self {
        EnumerationConfig {
            keep_fraction: 1.0,
            max_trip_size: 3,
            max_candidates_per_vehicle: 400,
        }
    }
}

/// Keeps, for every request, the cheapest `ceil(fraction * n)` of its `n`
/// single-request candidates (by anticipatory cost, ties by vehicle id).
pub fn prune_costly(singles: Vec<RoutedMatch>, fraction: f64) -> Vec<RoutedMatch> {
    let mut by_req: BTreeMap<RequestId, Vec<RoutedMatch>> = BTreeMap::new();
    for m in singles {
        by_req.entry(m.trip[0]).or_default().push(m);
    }
    let mut out = Vec::new();
    for (_, mut ms) in by_req {
        ms.sort_by(|a, b| {
            a.anticipatory_cost
                .total_cmp(&b.anticipatory_cost)
                .then(a.vehicle.cmp(&b.vehicle))
        });
        let keep = ((fraction * ms.len() as f64).ceil() as usize).clamp(1, ms.len());
        ms.truncate(keep);
        out.extend(ms);
    }
    out.sort_by_key(|m| (m.vehicle, m.trip.clone()));
    out
}

fn could_reach(net: &RoadNetwork, snap: &VehicleSnapshot, r: &Request, cons: &Constraints) -> bool {
    snap.time + net.time(snap.node, r.origin) - r.request_time <= cons.max_wait
}

/// All feasible (vehicle, trip) candidates for the pool, with best routes.
///
/// Trips grow one request at a time; a trip is only tried when every subset
/// one request smaller is itself feasible for that vehicle.
#[allow(clippy::too_many_arguments)]
pub fn enumerate_candidates(
    net: &RoadNetwork,
    snaps: &[VehicleSnapshot],
    pool: &[RequestId],
    requests: &[Request],
    cons: &Constraints,
    params: &CostParams,
    rates: Option<&RateField>,
    cfg: &EnumerationConfig,
) -> Vec<RoutedMatch> {
    let mut pool: Vec<RequestId> = pool.to_vec();
    pool.sort_unstable();
    let singles: Vec<RoutedMatch> = snaps
        .par_iter()
        .flat_map_iter(|snap| {
            pool.iter()
                .filter(|&&r| could_reach(net, snap, &requests[r], cons))
                .filter_map(|&r| best_route(net, snap, &[r], requests, cons, params, rates))
                .collect::<Vec<_>>()
        })
        .collect();
    let singles = prune_costly(singles, cfg.keep_fraction);
    let mut per_vehicle: HashMap<VehicleId, Vec<RoutedMatch>> = HashMap::new();
    for m in singles {
        per_vehicle.entry(m.vehicle).or_default().push(m);
    }
    snaps
        .par_iter()
        .flat_map_iter(|snap| {
            let singles = per_vehicle.get(&snap.id).cloned().unwrap_or_default();
            grow_trips(net, snap, singles, requests, cons, params, rates, cfg)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn grow_trips(
    net: &RoadNetwork,
    snap: &VehicleSnapshot,
    singles: Vec<RoutedMatch>,
    requests: &[Request],
    cons: &Constraints,
    params: &CostParams,
    rates: Option<&RateField>,
    cfg: &EnumerationConfig,
) -> Vec<RoutedMatch> {
    let max_size = cfg.max_trip_size.min(snap.capacity as usize);
    let reqs: Vec<RequestId> = singles.iter().map(|m| m.trip[0]).collect();
    let mut all = singles.clone();
    let mut feasible: HashSet<Vec<RequestId>> = singles.iter().map(|m| m.trip.clone()).collect();
    let mut level: Vec<Vec<RequestId>> = singles.into_iter().map(|m| m.trip).collect();
    for _size in 2..=max_size {
        let mut next = Vec::new();
        'grow: for trip in &level {
            let last = *trip.last().unwrap();
            for &r in reqs.iter().filter(|&&r| r > last) {
                if all.len() >= cfg.max_candidates_per_vehicle {
                    break 'grow;
                }
                let mut t = trip.clone();
                t.push(r);
                let subsets_ok = (0..t.len()).all(|skip| {
                    let sub: Vec<RequestId> =
                        t.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, &x)| x).collect();
                    feasible.contains(&sub)
                });
                if !subsets_ok {
                    continue;
                }
                if let Some(m) = best_route(net, snap, &t, requests, cons, params, rates) {
                    feasible.insert(t.clone());
                    next.push(t);
                    all.push(m);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        level = next;
    }
    all
}

/// What the solver sees of a candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolverCandidate {
    pub vehicle: VehicleId,
    pub trip: Vec<RequestId>,
    pub cost: i64,
}

/// A request that may go unserved, with its rejection penalty; `None` means
/// it must be covered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coverable {
    pub request: RequestId,
    pub penalty: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    /// Indices into the candidate list, ascending.
    pub selected: Vec<usize>,
    pub rejected: Vec<RequestId>,
    pub objective: i64,
    /// False when a search budget ran out and the best found is returned.
    pub optimal: bool,
}

/// Penalty that stands in for "must be covered" during the search.
const MUST_COVER: i64 = 1_000_000_000_000_000;

/// Search nodes allowed per component before settling for the best found.
pub const DEFAULT_NODE_BUDGET: u64 = 200_000;

/// Minimizes the summed cost of chosen candidates plus the penalties of
/// uncovered requests, with every vehicle and request used at most once.
/// Among equal objectives the first one met in a fixed search order wins.
pub fn solve_assignment(
    cands: &[SolverCandidate],
    reqs: &[Coverable],
    node_budget: u64,
) -> Assignment {
    let penalty: HashMap<RequestId, i64> = reqs
        .iter()
        .map(|c| (c.request, c.penalty.unwrap_or(MUST_COVER)))
        .collect();
    // candidates that cost at least as much as rejecting everything they serve never help
    let useful: Vec<usize> = (0..cands.len())
        .filter(|&i| {
            let c = &cands[i];
            c.trip.iter().all(|r| penalty.contains_key(r))
                && c.cost < c.trip.iter().map(|r| penalty[r]).sum::<i64>()
        })
        .collect();

    // components over requests and vehicles
    let mut comp = UnionFind::new(reqs.len());
    let req_index: HashMap<RequestId, usize> =
        reqs.iter().enumerate().map(|(i, c)| (c.request, i)).collect();
    let mut vehicle_first: HashMap<VehicleId, usize> = HashMap::new();
    for &i in &useful {
        let c = &cands[i];
        let anchor = req_index[&c.trip[0]];
        for r in &c.trip[1..] {
            comp.union(anchor, req_index[r]);
        }
        match vehicle_first.get(&c.vehicle) {
            Some(&a) => comp.union(a, anchor),
            None => {
                vehicle_first.insert(c.vehicle, anchor);
            }
        }
    }
    let mut groups: BTreeMap<usize, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for i in 0..reqs.len() {
        groups.entry(comp.find(i)).or_default().0.push(i);
    }
    for &i in &useful {
        let root = comp.find(req_index[&cands[i].trip[0]]);
        groups.get_mut(&root).unwrap().1.push(i);
    }

    let mut selected = Vec::new();
    let mut objective = 0i64;
    let mut optimal = true;
    for (_, (members, cand_idx)) in groups {
        let members: Vec<RequestId> = members.iter().map(|&i| reqs[i].request).collect();
        let sub = Component::new(cands, &cand_idx, &members, &penalty);
        let (sel, obj, opt) = sub.solve(node_budget);
        selected.extend(sel);
        objective += obj;
        optimal &= opt;
    }
    selected.sort_unstable();
    let covered: HashSet<RequestId> = selected
        .iter()
        .flat_map(|&i| cands[i].trip.iter().copied())
        .collect();
    let mut rejected: Vec<RequestId> = reqs
        .iter()
        .map(|c| c.request)
        .filter(|r| !covered.contains(r))
        .collect();
    rejected.sort_unstable();
    Assignment {
        selected,
        rejected,
        objective,
        optimal,
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a != b {
            let (lo, hi) = (a.min(b), a.max(b));
            self.parent[hi] = lo;
        }
    }
}

/// One independent piece of the assignment problem, with local indices.
struct Component {
    /// Global candidate index, local vehicle slot, local request slots, cost.
    cands: Vec<(usize, usize, Vec<usize>, i64)>,
    penalty: Vec<i64>,
    /// For each local request, candidates whose smallest request it is.
    led_by: Vec<Vec<usize>>,
    /// For each local request, candidates containing it.
    containing: Vec<Vec<usize>>,
    vehicles: usize,
}

impl Component {
    fn new(
        all: &[SolverCandidate],
        idx: &[usize],
        members: &[RequestId],
        penalty: &HashMap<RequestId, i64>,
    ) -> Self {
        let mut members = members.to_vec();
        members.sort_unstable();
        let local: HashMap<RequestId, usize> =
            members.iter().enumerate().map(|(i, &r)| (r, i)).collect();
        let mut vslot: BTreeMap<VehicleId, usize> = BTreeMap::new();
        for &i in idx {
            let n = vslot.len();
            vslot.entry(all[i].vehicle).or_insert(n);
        }
        let mut sorted = idx.to_vec();
        sorted.sort_unstable();
        let cands: Vec<_> = sorted
            .iter()
            .map(|&i| {
                let c = &all[i];
                let mut rs: Vec<usize> = c.trip.iter().map(|r| local[r]).collect();
                rs.sort_unstable();
                (i, vslot[&c.vehicle], rs, c.cost)
            })
            .collect();
        let mut led_by = vec![Vec::new(); members.len()];
        let mut containing = vec![Vec::new(); members.len()];
        for (k, c) in cands.iter().enumerate() {
            led_by[c.2[0]].push(k);
            for &r in &c.2 {
                containing[r].push(k);
            }
        }
        // cheapest per served request first, so good incumbents show up early
        let share = |k: usize| cands[k].3.div_euclid(cands[k].2.len() as i64);
        for ks in led_by.iter_mut().chain(containing.iter_mut()) {
            ks.sort_by_key(|&k| (share(k), k));
        }
        Component {
            cands,
            penalty: members.iter().map(|r| penalty[r]).collect(),
            led_by,
            containing,
            vehicles: vslot.len(),
        }
    }

    fn solve(&self, budget: u64) -> (Vec<usize>, i64, bool) {
        let n = self.penalty.len();
        let mut s = Search {
            comp: self,
            req_used: vec![false; n],
            veh_used: vec![false; self.vehicles],
            chosen: Vec::new(),
            best: self.greedy(),
            nodes: 0,
            budget,
            exhausted: false,
        };
        s.go(0, 0);
        let (obj, sel) = s.best;
        let mut global: Vec<usize> = sel.iter().map(|&k| self.cands[k].0).collect();
        global.sort_unstable();
        (global, obj, !s.exhausted)
    }

    /// Cheapest-savings-first greedy solution, as an initial incumbent.
    fn greedy(&self) -> (i64, Vec<usize>) {
        let mut order: Vec<usize> = (0..self.cands.len()).collect();
        let saving = |k: usize| {
            let c = &self.cands[k];
            c.3 - c.2.iter().map(|&r| self.penalty[r]).sum::<i64>()
        };
        order.sort_by_key(|&k| (saving(k), k));
        let mut req_used = vec![false; self.penalty.len()];
        let mut veh_used = vec![false; self.vehicles];
        let mut sel = Vec::new();
        for k in order {
            let c = &self.cands[k];
            if veh_used[c.1] || c.2.iter().any(|&r| req_used[r]) {
                continue;
            }
            veh_used[c.1] = true;
            for &r in &c.2 {
                req_used[r] = true;
            }
            sel.push(k);
        }
        sel.sort_unstable();
        (self.objective(&sel), sel)
    }

    fn objective(&self, sel: &[usize]) -> i64 {
        let mut covered = vec![false; self.penalty.len()];
        let mut total = 0;
        for &k in sel {
            total += self.cands[k].3;
            for &r in &self.cands[k].2 {
                covered[r] = true;
            }
        }
        total
            + covered
                .iter()
                .zip(&self.penalty)
                .filter(|(c, _)| !**c)
                .map(|(_, p)| p)
                .sum::<i64>()
    }
}

struct Search<'a> {
    comp: &'a Component,
    req_used: Vec<bool>,
    veh_used: Vec<bool>,
    chosen: Vec<usize>,
    best: (i64, Vec<usize>),
    nodes: u64,
    budget: u64,
    exhausted: bool,
}

impl Search<'_> {
    /// Each open request pays at least the smaller of its penalty and its
    /// cheapest per-request share among candidates still available.
    fn bound(&self, from: usize) -> i64 {
        let c = self.comp;
        let mut lb = 0;
        for r in from..c.penalty.len() {
            if self.req_used[r] {
                continue;
            }
            let mut m = c.penalty[r];
            // sorted by share, so the first usable candidate is the cheapest
            for &k in &c.containing[r] {
                let (_, v, rs, cost) = &c.cands[k];
                let share = cost.div_euclid(rs.len() as i64);
                if share >= m {
                    break;
                }
                if self.veh_used[*v] || rs.iter().any(|&x| x < from || self.req_used[x]) {
                    continue;
                }
                m = share;
                break;
            }
            lb += m;
        }
        lb
    }

    fn go(&mut self, r: usize, acc: i64) {
        if self.exhausted {
            return;
        }
        self.nodes += 1;
        if self.nodes > self.budget {
            self.exhausted = true;
            return;
        }
        let c = self.comp;
        let n = c.penalty.len();
        let mut r = r;
        while r < n && self.req_used[r] {
            r += 1;
        }
        if r == n {
            if acc < self.best.0 {
                let mut sel = self.chosen.clone();
                sel.sort_unstable();
                self.best = (acc, sel);
            }
            return;
        }
        if acc + self.bound(r) >= self.best.0 {
            return;
        }
        for &k in &c.led_by[r] {
            let (_, v, rs, cost) = &c.cands[k];
            if self.veh_used[*v] || rs.iter().any(|&x| self.req_used[x]) {
                continue;
            }
            self.veh_used[*v] = true;
            for &x in rs {
                self.req_used[x] = true;
            }
            self.chosen.push(k);
            self.go(r + 1, acc + cost);
            self.chosen.pop();
            for &x in rs {
                self.req_used[x] = false;
            }
            self.veh_used[*v] = false;
        }
        self.req_used[r] = true;
        self.go(r + 1, acc + c.penalty[r]);
        self.req_used[r] = false;
    }
}

/// Line-oriented dump of an assignment instance for an external ILP solver.
pub fn export_ilp(cands: &[SolverCandidate], reqs: &[Coverable]) -> String {
    let mut out = String::new();
    for c in cands {
        let _ = write!(out, "CAND {} {}", c.vehicle, c.cost);
        for r in &c.trip {
            let _ = write!(out, " {r}");
        }
        out.push('\n');
    }
    for r in reqs {
        match r.penalty {
            Some(p) => {
                let _ = writeln!(out, "REJ {} {}", r.request, p);
            }
            None => {
                let _ = writeln!(out, "REJ {} none", r.request);
            }
        }
    }
    out
}

/// Minimum-total-time one-to-one matching of idle vehicles to targets.
/// Returns (vehicle index, target index) pairs; `min(v, t)` pairs are made.
pub fn rebalance(net: &RoadNetwork, vehicles: &[Node], targets: &[Node]) -> Vec<(usize, usize)> {
    if vehicles.is_empty() || targets.is_empty() {
        return Vec::new();
    }
    let cost: Vec<Vec<Secs>> = vehicles
        .iter()
        .map(|&v| targets.iter().map(|&t| net.time(v, t)).collect())
        .collect();
    min_cost_matching(&cost)
}

/// Rectangular assignment (Hungarian method with potentials).
pub fn min_cost_matching(cost: &[Vec<Secs>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    if rows > cols {
        let t: Vec<Vec<Secs>> = (0..cols)
            .map(|j| (0..rows).map(|i| cost[i][j]).collect())
            .collect();
        let mut m: Vec<(usize, usize)> = min_cost_matching(&t).into_iter().map(|(j, i)| (i, j)).collect();
        m.sort_unstable();
        return m;
    }
    // rows <= cols; 1-based with a dummy column 0
    let inf = Secs::MAX / 4;
    let mut u = vec![0; rows + 1];
    let mut v = vec![0; cols + 1];
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=cols {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out: Vec<(usize, usize)> = (1..=cols)
        .filter(|&j| p[j] != 0)
        .map(|j| (p[j] - 1, j - 1))
        .collect();
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(vehicle: VehicleId, trip: &[RequestId], cost: i64) -> SolverCandidate {
        SolverCandidate {
            vehicle,
            trip: trip.to_vec(),
            cost,
        }
    }

    fn rej(request: RequestId, p: i64) -> Coverable {
        Coverable {
            request,
            penalty: Some(p),
        }
    }

    #[test]
    fn shared_trip_beats_two_singles_when_cheaper() {
        let cands = vec![cand(0, &[0], 5), cand(1, &[1], 5), cand(0, &[0, 1], 8)];
        let a = solve_assignment(&cands, &[rej(0, 100), rej(1, 100)], DEFAULT_NODE_BUDGET);
        assert_eq!(a.selected, vec![2]);
        assert_eq!(a.objective, 8);
        assert!(a.rejected.is_empty());
    }

    #[test]
    fn rejection_when_service_costs_more() {
        let cands = vec![cand(0, &[0], 50)];
        let a = solve_assignment(&cands, &[rej(0, 30)], DEFAULT_NODE_BUDGET);
        assert!(a.selected.is_empty());
        assert_eq!(a.rejected, vec![0]);
        assert_eq!(a.objective, 30);
    }

    #[test]
    fn one_trip_per_vehicle() {
        let cands = vec![cand(0, &[0], 1), cand(0, &[1], 1)];
        let a = solve_assignment(&cands, &[rej(0, 10), rej(1, 20)], DEFAULT_NODE_BUDGET);
        assert_eq!(a.selected, vec![1]);
        assert_eq!(a.objective, 11);
    }

    #[test]
    fn must_cover_requests_are_covered() {
        let cands = vec![cand(0, &[0], 500), cand(0, &[1], 1)];
        let reqs = [
            Coverable {
                request: 0,
                penalty: None,
            },
            rej(1, 100),
        ];
        let a = solve_assignment(&cands, &reqs, DEFAULT_NODE_BUDGET);
        assert_eq!(a.selected, vec![0]);
        assert_eq!(a.objective, 600);
    }

    #[test]
    fn ties_prefer_smaller_indices() {
        let cands = vec![cand(0, &[0], 5), cand(1, &[0], 5)];
        let a = solve_assignment(&cands, &[rej(0, 10)], DEFAULT_NODE_BUDGET);
        assert_eq!(a.selected, vec![0]);
    }

    #[test]
    fn negative_costs_are_taken() {
        let cands = vec![cand(0, &[0], -3), cand(1, &[0], 2)];
        let a = solve_assignment(&cands, &[rej(0, 1)], DEFAULT_NODE_BUDGET);
        assert_eq!(a.selected, vec![0]);
        assert_eq!(a.objective, -3);
    }

    #[test]
    fn ilp_text() {
        let cands = vec![cand(2, &[0, 4], 17)];
        let txt = export_ilp(&cands, &[rej(0, 9)]);
        assert_eq!(txt, "CAND 2 17 0 4\nREJ 0 9\n");
    }

    #[test]
    fn hungarian_small() {
        let cost = vec![vec![4, 1, 3], vec![2, 0, 5], vec![3, 2, 2]];
        let m = min_cost_matching(&cost);
        let total: Secs = m.iter().map(|&(i, j)| cost[i][j]).sum();
        assert_eq!(total, 5);
        assert_eq!(m.len(), 3);
        let wide = vec![vec![9, 1, 9, 9]];
        assert_eq!(min_cost_matching(&wide), vec![(0, 1)]);
        let tall = vec![vec![7], vec![2], vec![5]];
        assert_eq!(min_cost_matching(&tall), vec![(1, 0)]);
    }

    #[test]
    fn prune_keeps_cheapest_share() {
        let mk = |v: VehicleId, c: f64| RoutedMatch {
            vehicle: v,
            trip: vec![0],
            plan: Default::default(),
            base_cost: c,
            reward: 0.0,
            anticipatory_cost: c,
        };
        let kept = prune_costly(vec![mk(0, 3.0), mk(1, 1.0), mk(2, 2.0), mk(3, 1.0)], 0.5);
        let vs: Vec<_> = kept.iter().map(|m| m.vehicle).collect();
        assert_eq!(vs, vec![1, 3]);
        let one = prune_costly(vec![mk(0, 3.0), mk(1, 1.0)], 0.01);
        assert_eq!(one.len(), 1);
    }
}

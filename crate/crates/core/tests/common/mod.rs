//! Independent reference implementations and random instance builders shared
//! by the integration tests and the acceptance target.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ridepool::demand::{Request, RequestId, RequestStatus};
use ridepool::fleet::{Stop, StopPlan, Vehicle};
use ridepool::matching::{
    enumerate_candidates, to_nanos, Coverable, EnumerationConfig, SolverCandidate,
};
use ridepool::network::{NetworkSpec, Node, RoadNetwork, Secs};
use ridepool::rates::{RateField, RateKind, RateMethod};
use ridepool::routing::{best_route, Constraints, CostParams, RewardNode, VehicleSnapshot};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random strongly connected directed graph: a shuffled two-way ring plus
/// extra one-way edges, times in `[lo, hi]`.
pub fn random_spec(rng: &mut impl Rng, n: usize, extra: usize, lo: Secs, hi: Secs) -> NetworkSpec {
    let mut spec = NetworkSpec::default();
    for i in 0..n {
        spec.node(i as u64, rng.random::<f64>(), rng.random::<f64>());
    }
    let mut order: Vec<u64> = (0..n as u64).collect();
    order.shuffle(rng);
    for k in 0..n {
        let (a, b) = (order[k], order[(k + 1) % n]);
        if a != b {
            spec.edge(a, b, rng.random_range(lo..=hi));
            spec.edge(b, a, rng.random_range(lo..=hi));
        }
    }
    for _ in 0..extra {
        let a = rng.random_range(0..n as u64);
        let b = rng.random_range(0..n as u64);
        if a != b {
            spec.edge(a, b, rng.random_range(lo..=hi));
        }
    }
    spec
}

/// All-pairs times by Bellman-Ford relaxation from every source, indexed by
/// position in `spec.nodes`.
pub fn bellman_ford_all(spec: &NetworkSpec) -> Vec<Vec<Option<Secs>>> {
    let n = spec.nodes.len();
    let pos = |id: u64| spec.nodes.iter().position(|&(i, _, _)| i == id).unwrap();
    let edges: Vec<(usize, usize, Secs)> = spec.edges.iter().map(|&(a, b, t)| (pos(a), pos(b), t)).collect();
    (0..n)
        .map(|s| {
            let mut d: Vec<Option<Secs>> = vec![None; n];
            d[s] = Some(0);
            for _ in 0..n {
                let mut changed = false;
                for &(a, b, t) in &edges {
                    if let Some(da) = d[a] {
                        if d[b].is_none_or(|db| da + t < db) {
                            d[b] = Some(da + t);
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            d
        })
        .collect()
}

/// A vehicle with some requests onboard and some assigned, plus new requests
/// to route. Everything uses indices into `requests`.
pub struct RoutingCase {
    pub net: RoadNetwork,
    pub requests: Vec<Request>,
    pub snap: VehicleSnapshot,
    pub trip: Vec<RequestId>,
    pub cons: Constraints,
    pub params: CostParams,
    pub rates: Option<RateField>,
}

pub fn random_cons(rng: &mut impl Rng) -> Constraints {
    Constraints {
        max_wait: rng.random_range(200..=500),
        max_delay: rng.random_range(400..=900),
        fifo: rng.random_bool(0.2),
    }
}

pub fn random_params(rng: &mut impl Rng, net: &RoadNetwork) -> (CostParams, Option<RateField>) {
    let mut params = CostParams::default();
    if rng.random_bool(0.5) {
        params.theta = [1.0, 2.0, 6.0][rng.random_range(0..3)];
        params.reward_node = if rng.random_bool(0.5) {
            RewardNode::LastNode
        } else {
            RewardNode::IdleNode
        };
        let mut f = RateField::zeros(net.node_count(), RateKind::Generation, RateMethod::Basic, 0);
        for v in &mut f.values {
            *v = rng.random_range(0..4) as f64 * 0.01;
        }
        (params, Some(f))
    } else {
        (params, None)
    }
}

fn request(rng: &mut impl Rng, n: usize, id: RequestId, t: Secs) -> Request {
    let o = rng.random_range(0..n);
    let mut d = rng.random_range(0..n);
    while d == o {
        d = rng.random_range(0..n);
    }
    let mut r = Request::new(id, o, d, t);
    r.party_size = if rng.random_bool(0.15) { 2 } else { 1 };
    r
}

/// Builds a vehicle that already serves `existing` requests (some picked up
/// by time `now`), or `None` if the drawn requests cannot be served at all.
pub fn loaded_vehicle(
    rng: &mut impl Rng,
    net: &RoadNetwork,
    requests: &mut Vec<Request>,
    existing: usize,
    capacity: u32,
    cons: &Constraints,
    now: Secs,
) -> Option<Vehicle> {
    let n = net.node_count();
    let mut v = Vehicle::new(0, capacity, rng.random_range(0..n));
    for _ in 0..existing {
        let id = requests.len();
        let t = rng.random_range(0..=now.max(1) / 2);
        requests.push(request(rng, n, id, t));
    }
    let ids: Vec<RequestId> = (0..requests.len()).collect();
    if !ids.is_empty() {
        let snap = VehicleSnapshot::new(&v, net, requests);
        let m = best_route(net, &snap, &ids, requests, cons, &CostParams::default(), None)?;
        for r in &ids {
            requests[*r].set_status(RequestStatus::WaitingAssignment).unwrap();
            requests[*r].set_status(RequestStatus::Assigned).unwrap();
        }
        v.set_plan(net, m.plan, requests);
        v.advance(net, requests, now);
    } else {
        v.advance(net, requests, now);
    }
    Some(v)
}

/// A routing instance with at most `max_total` requests in all.
pub fn random_routing_case(seed: u64, max_total: usize) -> RoutingCase {
    let mut r = rng(seed);
    loop {
        let n = r.random_range(5..=12);
        let spec = random_spec(&mut r, n, n, 30, 150);
        let net = RoadNetwork::build(&spec).unwrap();
        let cons = random_cons(&mut r);
        let capacity = r.random_range(1..=4);
        let existing = r.random_range(0..max_total);
        let now = r.random_range(0..=400);
        let mut requests = Vec::new();
        let Some(v) = loaded_vehicle(&mut r, &net, &mut requests, existing, capacity, &cons, now) else {
            continue;
        };
        let snap = VehicleSnapshot::new(&v, &net, &requests);
        let remaining = max_total - snap.request_count();
        let new = r.random_range(0..=remaining);
        let mut trip = Vec::new();
        for _ in 0..new {
            let id = requests.len();
            let t = now + r.random_range(-60..=60);
            let mut q = request(&mut r, n, id, t);
            q.request_time = q.request_time.max(0);
            requests.push(q);
            trip.push(id);
        }
        let (params, rates) = random_params(&mut r, &net);
        return RoutingCase {
            net,
            requests,
            snap,
            trip,
            cons,
            params,
            rates,
        };
    }
}

/// Best anticipatory cost over every stop order, computed from scratch.
/// A trip whose parties together exceed the capacity is never a candidate.
pub fn oracle_route_cost(c: &RoutingCase) -> Option<f64> {
    let net = &c.net;
    let s = &c.snap;
    let reqs = &c.requests;
    if c.trip.iter().map(|&r| reqs[r].party_size).sum::<u32>() > s.capacity {
        return None;
    }
    // stops: (request, is_dropoff)
    let mut stops: Vec<(RequestId, bool)> = Vec::new();
    let mut all: Vec<RequestId> = s.onboard.iter().chain(&s.assigned).chain(&c.trip).copied().collect();
    all.sort_unstable();
    for &r in &all {
        if !s.onboard.contains(&r) {
            stops.push((r, false));
        }
        stops.push((r, true));
    }
    // reference schedule of the vehicle's current plan
    let mut old_pick = std::collections::HashMap::new();
    let mut old_drop = std::collections::HashMap::new();
    let mut base_len = 0;
    {
        let (mut at, mut clock) = (s.node, s.time);
        for st in &s.base.stops {
            let Some(r) = st.request else { continue };
            let leg = net.time(at, st.node);
            base_len += leg;
            clock += leg;
            if st.action == ridepool::fleet::StopAction::Pickup {
                clock = clock.max(reqs[r].request_time);
                old_pick.insert(r, clock);
            } else {
                old_drop.insert(r, clock);
            }
            at = st.node;
        }
    }
    let mut best: Option<f64> = None;
    let mut perm: Vec<usize> = (0..stops.len()).collect();
    permute(&mut perm, 0, &mut |p| {
        let seq: Vec<(RequestId, bool)> = p.iter().map(|&i| stops[i]).collect();
        // precedence
        for (k, &(r, d)) in seq.iter().enumerate() {
            if d && !s.onboard.contains(&r) && !seq[..k].contains(&(r, false)) {
                return;
            }
        }
        let (mut at, mut clock, mut seats, mut len) = (s.node, s.time, s.seats_used, 0);
        let mut pick = std::collections::HashMap::new();
        let mut drop = std::collections::HashMap::new();
        let mut last_tr = Secs::MIN;
        for &(r, d) in &seq {
            let q = &reqs[r];
            let node = if d { q.destination } else { q.origin };
            let leg = net.time(at, node);
            len += leg;
            clock += leg;
            if d {
                if clock - q.request_time - net.time(q.origin, q.destination) > c.cons.max_delay {
                    return;
                }
                seats -= q.party_size;
                drop.insert(r, clock);
            } else {
                clock = clock.max(q.request_time);
                if clock - q.request_time > c.cons.max_wait {
                    return;
                }
                if c.cons.fifo {
                    if q.request_time < last_tr {
                        return;
                    }
                    last_tr = q.request_time;
                }
                seats += q.party_size;
                if seats > s.capacity {
                    return;
                }
                pick.insert(r, clock);
            }
            at = node;
        }
        let (mut w, mut det) = (0, 0);
        for &r in &all {
            let q = &reqs[r];
            if c.trip.contains(&r) {
                w += pick[&r] - q.request_time;
                det += drop[&r] - pick[&r] - net.time(q.origin, q.destination);
            } else if s.onboard.contains(&r) {
                det += drop[&r] - old_drop[&r];
            } else {
                w += pick[&r] - old_pick[&r];
                det += (drop[&r] - pick[&r]) - (old_drop[&r] - old_pick[&r]);
            }
        }
        let p = &c.params;
        let mut cost = (p.p_wait * w as f64 + p.p_ride * det as f64 + p.p_operator * (len - base_len) as f64) / 3600.0;
        if let (Some(rates), Some(&(lr, ld))) = (&c.rates, seq.last()) {
            let node = match p.reward_node {
                RewardNode::LastNode => {
                    let q = &reqs[lr];
                    if ld {
                        q.destination
                    } else {
                        q.origin
                    }
                }
                RewardNode::IdleNode => idle_node(&seq, reqs, s.capacity, s.seats_used),
            };
            cost -= p.theta * rates.get(node);
        }
        if best.is_none_or(|b| cost < b) {
            best = Some(cost);
        }
    });
    best
}

/// First stop after which the vehicle keeps a free seat until the end of the
/// route; the last stop if there is none.
fn idle_node(seq: &[(RequestId, bool)], reqs: &[Request], cap: u32, start: u32) -> Node {
    let mut after = Vec::with_capacity(seq.len());
    let mut seats = start;
    for &(r, d) in seq {
        if d {
            seats -= reqs[r].party_size;
        } else {
            seats += reqs[r].party_size;
        }
        after.push(cap - seats);
    }
    let mut idx = seq.len() - 1;
    for k in (0..seq.len()).rev() {
        if after[k] > 0 {
            idx = k;
        } else {
            break;
        }
    }
    let idx = idx.min(seq.len() - 1);
    let (r, d) = seq[idx];
    if d {
        reqs[r].destination
    } else {
        reqs[r].origin
    }
}

fn permute(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, f);
        p.swap(k, i);
    }
}

/// Minimum of selected costs plus penalties of uncovered requests over every
/// selection using each vehicle and each request at most once. `None` when
/// some must-cover request cannot be covered.
pub fn oracle_assignment(cands: &[SolverCandidate], reqs: &[Coverable]) -> Option<i64> {
    fn go(
        k: usize,
        cands: &[SolverCandidate],
        reqs: &[Coverable],
        used_v: &mut Vec<usize>,
        covered: &mut Vec<RequestId>,
        acc: i64,
        best: &mut Option<i64>,
    ) {
        if k == cands.len() {
            let mut total = acc;
            for r in reqs {
                if !covered.contains(&r.request) {
                    match r.penalty {
                        Some(p) => total += p,
                        None => return,
                    }
                }
            }
            if best.is_none_or(|b| total < b) {
                *best = Some(total);
            }
            return;
        }
        go(k + 1, cands, reqs, used_v, covered, acc, best);
        let c = &cands[k];
        if used_v.contains(&c.vehicle) || c.trip.iter().any(|r| covered.contains(r)) {
            return;
        }
        if c.trip.iter().any(|r| !reqs.iter().any(|q| q.request == *r)) {
            return;
        }
        used_v.push(c.vehicle);
        covered.extend(&c.trip);
        go(k + 1, cands, reqs, used_v, covered, acc + c.cost, best);
        covered.truncate(covered.len() - c.trip.len());
        used_v.pop();
    }
    let mut best = None;
    go(0, cands, reqs, &mut Vec::new(), &mut Vec::new(), 0, &mut best);
    best
}

/// Candidates produced by the real enumeration for random vehicles and
/// requests: at most `max_req` requests and `max_veh` vehicles of capacity
/// at most 3.
pub fn random_assignment_case(seed: u64, max_req: usize, max_veh: usize) -> (Vec<SolverCandidate>, Vec<Coverable>) {
    let mut r = rng(seed);
    let n = r.random_range(6..=12);
    let spec = random_spec(&mut r, n, n, 30, 120);
    let net = RoadNetwork::build(&spec).unwrap();
    let cons = Constraints {
        max_wait: 300,
        max_delay: 600,
        fifo: false,
    };
    let nv = r.random_range(1..=max_veh);
    let nr = r.random_range(1..=max_req);
    let now = 600;
    let mut requests = Vec::new();
    for id in 0..nr {
        let t = now - r.random_range(0..60);
        requests.push(request(&mut r, n, id, t));
    }
    let vehicles: Vec<Vehicle> = (0..nv).map(|i| Vehicle::new(i, r.random_range(1..=3), r.random_range(0..n))).collect();
    let mut vs = vehicles;
    for v in &mut vs {
        v.advance(&net, &mut requests, now);
    }
    let snaps: Vec<VehicleSnapshot> = vs.iter().map(|v| VehicleSnapshot::new(v, &net, &requests)).collect();
    let pool: Vec<RequestId> = (0..nr).collect();
    let (params, rates) = random_params(&mut r, &net);
    let cfg = EnumerationConfig {
        keep_fraction: 1.0,
        max_trip_size: 3,
        max_candidates_per_vehicle: 10_000,
    };
    let routed = enumerate_candidates(&net, &snaps, &pool, &requests, &cons, &params, rates.as_ref(), &cfg);
    let cands = routed
        .iter()
        .map(|m| SolverCandidate {
            vehicle: m.vehicle,
            trip: m.trip.clone(),
            cost: to_nanos(m.anticipatory_cost),
        })
        .collect();
    let penalty = to_nanos(params.p_reject);
    let reqs = pool
        .iter()
        .map(|&q| Coverable {
            request: q,
            penalty: Some(if r.random_bool(0.2) { penalty / 60 } else { penalty }),
        })
        .collect();
    (cands, reqs)
}

/// Plain stop plan serving requests in the given order, pickups then dropoffs.
pub fn plan_of(requests: &[Request], order: &[(RequestId, bool)]) -> StopPlan {
    StopPlan {
        stops: order
            .iter()
            .map(|&(r, d)| if d { Stop::dropoff(&requests[r]) } else { Stop::pickup(&requests[r]) })
            .collect(),
        total_length: 0,
    }
}

//! Route optimization for one vehicle and one candidate trip.
//!
//! A route must serve the trip plus everything the vehicle already carries or
//! is committed to, within the waiting, delay and capacity limits. Among
//! feasible stop orders the one with the lowest anticipatory cost wins:
//! the plain cost minus `theta` times the reward read off the rate field.

use serde::{Deserialize, Serialize};

use crate::demand::{Request, RequestId};
use crate::fleet::{seats_free_profile, Stop, StopAction, StopPlan, Vehicle, VehicleId};
use crate::network::{Node, RoadNetwork, Secs};
use crate::rates::RateField;

/// Largest request count (aboard + committed + trip) searched exhaustively.
pub const EXHAUSTIVE_LIMIT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Constraints {
    /// Longest a request may wait between its request time and pickup.
    pub max_wait: Secs,
    /// Longest extra time (waiting plus detour) a request may suffer.
    pub max_delay: Secs,
    /// Pick up requests in order of request time.
    #[serde(default)]
    pub fifo: bool,
}

impl Default for Constraints {
    fn default() -> Self {
        Constraints {
            max_wait: 300,
            max_delay: 600,
            fifo: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardNode {
    LastNode,
    IdleNode,
}

/// Prices per hour of waiting, riding and driving; rejection penalty per request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    pub p_wait: f64,
    pub p_ride: f64,
    pub p_operator: f64,
    pub p_reject: f64,
    pub theta: f64,
    pub reward_node: RewardNode,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            p_wait: 4.64,
            p_ride: 2.32,
            p_operator: 3.48,
            p_reject: 3.09,
            theta: 0.0,
            reward_node: RewardNode::LastNode,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoutedMatch {
    pub vehicle: VehicleId,
    /// Sorted request ids.
    pub trip: Vec<RequestId>,
    pub plan: StopPlan,
    pub base_cost: f64,
    pub reward: f64,
    pub anticipatory_cost: f64,
}

/// What routing needs to know about a vehicle at a decision instant.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleSnapshot {
    pub id: VehicleId,
    pub capacity: u32,
    pub node: Node,
    pub time: Secs,
    pub seats_used: u32,
    pub onboard: Vec<RequestId>,
    pub assigned: Vec<RequestId>,
    /// Current request stops (no rebalancing targets), timed from the anchor.
    pub base: StopPlan,
}

impl VehicleSnapshot {
    pub fn new(v: &Vehicle, net: &RoadNetwork, requests: &[Request]) -> Self {
        let (node, time) = v.anchor();
        let mut base = StopPlan {
            stops: v
                .plan
                .stops
                .iter()
                .filter(|s| s.action != StopAction::Rebalance)
                .cloned()
                .collect(),
            total_length: 0,
        };
        base.retime(net, node, time, requests);
        VehicleSnapshot {
            id: v.id,
            capacity: v.capacity,
            node,
            time,
            seats_used: v.seats_used(requests),
            onboard: v.onboard.clone(),
            assigned: v.assigned.clone(),
            base,
        }
    }

    pub fn request_count(&self) -> usize {
        self.onboard.len() + self.assigned.len()
    }

    fn base_times(&self, r: RequestId) -> (Option<Secs>, Option<Secs>) {
        let mut pick = None;
        let mut drop = None;
        for s in &self.base.stops {
            if s.request == Some(r) {
                match s.action {
                    StopAction::Pickup => pick = Some(s.service),
                    StopAction::Dropoff => drop = Some(s.arrival),
                    StopAction::Rebalance => {}
                }
            }
        }
        (pick, drop)
    }
}

#[derive(Debug, Clone, Copy)]
struct Item {
    id: RequestId,
    origin: Node,
    dest: Node,
    tr: Secs,
    direct: Secs,
    party: u32,
    onboard: bool,
    in_trip: bool,
    old_pick: Secs,
    old_drop: Secs,
}

/// One stop of a candidate sequence: item index and whether it is the dropoff.
type StopRef = (usize, bool);

#[derive(Debug, Clone)]
struct Timing {
    pick: Vec<Secs>,
    drop: Vec<Secs>,
    length: Secs,
}

/// Integer second totals entering the cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CostTerms {
    pub wait: Secs,
    pub detour: Secs,
    pub extra_length: Secs,
}

impl CostTerms {
    pub fn price(&self, p: &CostParams) -> f64 {
        (p.p_wait * self.wait as f64
            + p.p_ride * self.detour as f64
            + p.p_operator * self.extra_length as f64)
            / 3600.0
    }
}

struct Problem<'a> {
    net: &'a RoadNetwork,
    snap: &'a VehicleSnapshot,
    cons: &'a Constraints,
    items: Vec<Item>,
}

impl<'a> Problem<'a> {
    fn new(
        net: &'a RoadNetwork,
        snap: &'a VehicleSnapshot,
        trip: &[RequestId],
        requests: &[Request],
        cons: &'a Constraints,
    ) -> Self {
        let mut ids: Vec<(RequestId, bool)> = snap
            .onboard
            .iter()
            .chain(&snap.assigned)
            .map(|&r| (r, false))
            .chain(trip.iter().map(|&r| (r, true)))
            .collect();
        ids.sort_unstable();
        let items = ids
            .into_iter()
            .map(|(r, in_trip)| {
                let req = &requests[r];
                let (old_pick, old_drop) = snap.base_times(r);
                Item {
                    id: r,
                    origin: req.origin,
                    dest: req.destination,
                    tr: req.request_time,
                    direct: net.time(req.origin, req.destination),
                    party: req.party_size,
                    onboard: snap.onboard.contains(&r),
                    in_trip,
                    old_pick: old_pick.unwrap_or(0),
                    old_drop: old_drop.unwrap_or(0),
                }
            })
            .collect();
        Problem {
            net,
            snap,
            cons,
            items,
        }
    }

    fn stop_node(&self, s: StopRef) -> Node {
        let it = &self.items[s.0];
        if s.1 {
            it.dest
        } else {
            it.origin
        }
    }

    /// Times a full sequence, or `None` if it breaks a constraint.
    fn simulate(&self, seq: &[StopRef]) -> Option<Timing> {
        let n = self.items.len();
        let mut t = Timing {
            pick: vec![0; n],
            drop: vec![0; n],
            length: 0,
        };
        let mut at = self.snap.node;
        let mut clock = self.snap.time;
        let mut seats = self.snap.seats_used;
        let mut last_pick_tr = Secs::MIN;
        for &s in seq {
            let it = &self.items[s.0];
            let node = self.stop_node(s);
            let leg = self.net.time(at, node);
            t.length += leg;
            let arrival = clock + leg;
            if s.1 {
                if arrival - it.tr - it.direct > self.cons.max_delay {
                    return None;
                }
                seats -= it.party;
                t.drop[s.0] = arrival;
                clock = arrival;
            } else {
                let service = arrival.max(it.tr);
                if service - it.tr > self.cons.max_wait {
                    return None;
                }
                if self.cons.fifo {
                    if it.tr < last_pick_tr {
                        return None;
                    }
                    last_pick_tr = it.tr;
                }
                seats += it.party;
                if seats > self.snap.capacity {
                    return None;
                }
                t.pick[s.0] = service;
                clock = service;
            }
            at = node;
        }
        Some(t)
    }

    fn terms(&self, t: &Timing) -> CostTerms {
        let mut c = CostTerms {
            extra_length: t.length - self.snap.base.total_length,
            ..CostTerms::default()
        };
        for (i, it) in self.items.iter().enumerate() {
            if it.in_trip {
                c.wait += t.pick[i] - it.tr;
                c.detour += t.drop[i] - t.pick[i] - it.direct;
            } else if it.onboard {
                c.detour += t.drop[i] - it.old_drop;
            } else {
                c.wait += t.pick[i] - it.old_pick;
                c.detour += (t.drop[i] - t.pick[i]) - (it.old_drop - it.old_pick);
            }
        }
        c
    }

    fn reward(&self, seq: &[StopRef], rates: Option<&RateField>, mode: RewardNode) -> f64 {
        let Some(rates) = rates else { return 0.0 };
        let Some(&last) = seq.last() else { return 0.0 };
        let node = match mode {
            RewardNode::LastNode => self.stop_node(last),
            RewardNode::IdleNode => {
                let deltas = seq.iter().map(|&(i, d)| {
                    let p = self.items[i].party as i64;
                    if d {
                        -p
                    } else {
                        p
                    }
                });
                let free = seats_free_profile(self.snap.capacity, self.snap.seats_used, deltas)
                    .expect("feasible sequences respect capacity");
                self.stop_node(seq[idle_stop_index(&free)])
            }
        };
        rates.get(node)
    }

    fn to_plan(&self, seq: &[StopRef], requests: &[Request]) -> StopPlan {
        let mut plan = StopPlan {
            stops: seq
                .iter()
                .map(|&(i, d)| {
                    let r = &requests[self.items[i].id];
                    if d {
                        Stop::dropoff(r)
                    } else {
                        Stop::pickup(r)
                    }
                })
                .collect(),
            total_length: 0,
        };
        plan.retime(self.net, self.snap.node, self.snap.time, requests);
        plan
    }

    /// Base sequence taken from the vehicle's current plan.
    fn base_sequence(&self) -> Vec<StopRef> {
        self.snap
            .base
            .stops
            .iter()
            .filter_map(|s| {
                let r = s.request?;
                let i = self.items.iter().position(|it| it.id == r)?;
                Some((i, s.action == StopAction::Dropoff))
            })
            .collect()
    }
}

/// Index of the idle stop given the free seats on every leg (leg 0 is before
/// the first stop): the first stop after which seats stay free to the end.
pub fn idle_stop_index(free: &[u32]) -> usize {
    let stops = free.len() - 1;
    let mut idx = stops;
    for i in (0..stops).rev() {
        if free[i + 1] > 0 {
            idx = i;
        } else {
            break;
        }
    }
    // full after the final stop only happens with a trailing pickup
    idx.min(stops.saturating_sub(1))
}

struct Best {
    cost: f64,
    seq: Vec<StopRef>,
    terms: CostTerms,
    reward: f64,
}

struct Dfs<'p, 'a> {
    prob: &'p Problem<'a>,
    rates: Option<&'p RateField>,
    params: &'p CostParams,
    seq: Vec<StopRef>,
    pick: Vec<Secs>,
    drop: Vec<Secs>,
    best: Option<Best>,
}

impl Dfs<'_, '_> {
    /// `picked`/`dropped` are bitmasks over items; `last_tr` drives FIFO.
    #[allow(clippy::too_many_arguments)]
    fn go(&mut self, at: Node, clock: Secs, seats: u32, length: Secs, picked: u32, dropped: u32, last_tr: Secs) {
        let n = self.prob.items.len();
        let full = (1u32 << n) - 1;
        if dropped == full {
            let t = Timing {
                pick: self.pick.clone(),
                drop: self.drop.clone(),
                length,
            };
            let terms = self.prob.terms(&t);
            let base = terms.price(self.params);
            let reward = self.prob.reward(&self.seq, self.rates, self.params.reward_node);
            let cost = base - self.params.theta * reward;
            if self.best.as_ref().is_none_or(|b| cost < b.cost) {
                self.best = Some(Best {
                    cost,
                    seq: self.seq.clone(),
                    terms,
                    reward,
                });
            }
            return;
        }
        let cons = self.prob.cons;
        for i in 0..n {
            let it = self.prob.items[i];
            let bit = 1u32 << i;
            if dropped & bit != 0 {
                continue;
            }
            if picked & bit == 0 {
                // pickup
                if cons.fifo && it.tr < last_tr {
                    continue;
                }
                let leg = self.prob.net.time(at, it.origin);
                let service = (clock + leg).max(it.tr);
                if service - it.tr > cons.max_wait || seats + it.party > self.prob.snap.capacity {
                    continue;
                }
                self.pick[i] = service;
                self.seq.push((i, false));
                let tr = if cons.fifo { it.tr } else { last_tr };
                self.go(it.origin, service, seats + it.party, length + leg, picked | bit, dropped, tr);
                self.seq.pop();
            } else {
                let leg = self.prob.net.time(at, it.dest);
                let arrival = clock + leg;
                if arrival - it.tr - it.direct > cons.max_delay {
                    continue;
                }
                self.drop[i] = arrival;
                self.seq.push((i, true));
                self.go(it.dest, arrival, seats - it.party, length + leg, picked, dropped | bit, last_tr);
                self.seq.pop();
            }
        }
    }
}

/// Cheapest feasible route (by anticipatory cost) serving `trip` plus the
/// vehicle's current requests; `None` when no order satisfies the constraints.
pub fn best_route(
    net: &RoadNetwork,
    snap: &VehicleSnapshot,
    trip: &[RequestId],
    requests: &[Request],
    cons: &Constraints,
    params: &CostParams,
    rates: Option<&RateField>,
) -> Option<RoutedMatch> {
    let mut trip: Vec<RequestId> = trip.to_vec();
    trip.sort_unstable();
    let trip_seats: u32 = trip.iter().map(|&r| requests[r].party_size).sum();
    if trip_seats > snap.capacity {
        return None;
    }
    let prob = Problem::new(net, snap, &trip, requests, cons);
    let best = if prob.items.len() <= EXHAUSTIVE_LIMIT {
        exhaustive(&prob, params, rates)
    } else {
        insertion(net, snap, &trip, requests, cons, params, rates)
    }?;
    let plan = prob.to_plan(&best.seq, requests);
    Some(RoutedMatch {
        vehicle: snap.id,
        trip,
        plan,
        base_cost: best.terms.price(params),
        reward: best.reward,
        anticipatory_cost: best.cost,
    })
}

fn exhaustive(prob: &Problem<'_>, params: &CostParams, rates: Option<&RateField>) -> Option<Best> {
    let n = prob.items.len();
    let picked = prob
        .items
        .iter()
        .enumerate()
        .filter(|(_, it)| it.onboard)
        .fold(0u32, |m, (i, _)| m | (1 << i));
    let mut dfs = Dfs {
        prob,
        rates,
        params,
        seq: Vec::with_capacity(2 * n),
        pick: vec![0; n],
        drop: vec![0; n],
        best: None,
    };
    dfs.go(prob.snap.node, prob.snap.time, prob.snap.seats_used, 0, picked, 0, Secs::MIN);
    dfs.best
}

/// Inserts trip requests one at a time (by id) into the current plan at the
/// cheapest feasible pickup/dropoff positions.
fn insertion(
    net: &RoadNetwork,
    snap: &VehicleSnapshot,
    trip: &[RequestId],
    requests: &[Request],
    cons: &Constraints,
    params: &CostParams,
    rates: Option<&RateField>,
) -> Option<Best> {
    let base_prob = Problem::new(net, snap, &[], requests, cons);
    let mut seq_ids: Vec<(RequestId, bool)> = base_prob
        .base_sequence()
        .into_iter()
        .map(|(i, d)| (base_prob.items[i].id, d))
        .collect();
    let mut best = None;
    if trip.is_empty() {
        let seq: Vec<StopRef> = base_prob.base_sequence();
        let t = base_prob.simulate(&seq)?;
        let terms = base_prob.terms(&t);
        let reward = base_prob.reward(&seq, rates, params.reward_node);
        return Some(Best {
            cost: terms.price(params) - params.theta * reward,
            seq,
            terms,
            reward,
        });
    }
    for k in 0..trip.len() {
        let prob = Problem::new(net, snap, &trip[..=k], requests, cons);
        let index_of = |r: RequestId| prob.items.iter().position(|it| it.id == r).unwrap();
        let current: Vec<StopRef> = seq_ids.iter().map(|&(r, d)| (index_of(r), d)).collect();
        let new = index_of(trip[k]);
        let mut round: Option<Best> = None;
        for i in 0..=current.len() {
            for j in i..=current.len() {
                let mut seq = current.clone();
                seq.insert(j, (new, true));
                seq.insert(i, (new, false));
                let Some(t) = prob.simulate(&seq) else { continue };
                let terms = prob.terms(&t);
                let reward = prob.reward(&seq, rates, params.reward_node);
                let cost = terms.price(params) - params.theta * reward;
                if round.as_ref().is_none_or(|b| cost < b.cost) {
                    round = Some(Best {
                        cost,
                        seq,
                        terms,
                        reward,
                    });
                }
            }
        }
        let r = round?;
        seq_ids = r.seq.iter().map(|&(i, d)| (prob.items[i].id, d)).collect();
        best = Some(r);
    }
    // re-express in the indexing of the full problem (same item set, same order)
    best
}

/// Cost terms of a given timed route for `snap` serving `trip`, or `None`
/// if the route does not serve exactly the right requests or breaks a constraint.
pub fn route_cost_terms(
    net: &RoadNetwork,
    snap: &VehicleSnapshot,
    trip: &[RequestId],
    plan: &StopPlan,
    requests: &[Request],
    cons: &Constraints,
) -> Option<CostTerms> {
    let prob = Problem::new(net, snap, trip, requests, cons);
    let seq = sequence_of(&prob, plan)?;
    let t = prob.simulate(&seq)?;
    Some(prob.terms(&t))
}

/// Plain cost of serving `trip` with `plan`.
pub fn base_cost(
    net: &RoadNetwork,
    snap: &VehicleSnapshot,
    trip: &[RequestId],
    plan: &StopPlan,
    requests: &[Request],
    cons: &Constraints,
    params: &CostParams,
) -> Option<f64> {
    route_cost_terms(net, snap, trip, plan, requests, cons).map(|t| t.price(params))
}

/// Rate read at the route's last node or idle node.
pub fn reward(
    snap: &VehicleSnapshot,
    plan: &StopPlan,
    requests: &[Request],
    rates: &RateField,
    mode: RewardNode,
) -> f64 {
    let Some(node) = reward_node(snap, plan, requests, mode) else {
        return 0.0;
    };
    rates.get(node)
}

/// Node whose rate the reward reads.
pub fn reward_node(
    snap: &VehicleSnapshot,
    plan: &StopPlan,
    requests: &[Request],
    mode: RewardNode,
) -> Option<Node> {
    let last = plan.last_node()?;
    Some(match mode {
        RewardNode::LastNode => last,
        RewardNode::IdleNode => {
            let free = seats_free_profile(
                snap.capacity,
                snap.seats_used,
                plan.stops.iter().map(|s| crate::fleet::seat_delta(s, requests)),
            )
            .ok()?;
            plan.stops[idle_stop_index(&free)].node
        }
    })
}

fn sequence_of(prob: &Problem<'_>, plan: &StopPlan) -> Option<Vec<StopRef>> {
    let mut seq = Vec::with_capacity(plan.stops.len());
    let mut seen = vec![(0u8, 0u8); prob.items.len()];
    for s in &plan.stops {
        let r = s.request?;
        let i = prob.items.iter().position(|it| it.id == r)?;
        match s.action {
            StopAction::Pickup => {
                if prob.items[i].onboard {
                    return None;
                }
                seen[i].0 += 1;
                seq.push((i, false));
            }
            StopAction::Dropoff => {
                seen[i].1 += 1;
                seq.push((i, true));
            }
            StopAction::Rebalance => return None,
        }
    }
    let ok = prob.items.iter().zip(&seen).all(|(it, &(p, d))| {
        d == 1 && p == if it.onboard { 0 } else { 1 }
    });
    ok.then_some(seq)
}

/// Independent check of a timed plan: re-derives the schedule and verifies
/// every constraint, precedence and capacity on every leg.
pub fn audit_plan(
    net: &RoadNetwork,
    snap: &VehicleSnapshot,
    plan: &StopPlan,
    requests: &[Request],
    cons: &Constraints,
) -> Result<(), String> {
    let mut retimed = plan.clone();
    retimed.retime(net, snap.node, snap.time, requests);
    if retimed != *plan {
        return Err("plan times do not match a shortest-path schedule".into());
    }
    let mut onboard: Vec<RequestId> = snap.onboard.clone();
    let mut seats = snap.seats_used;
    for s in &plan.stops {
        let Some(r) = s.request else { continue };
        let req = &requests[r];
        match s.action {
            StopAction::Pickup => {
                if onboard.contains(&r) {
                    return Err(format!("request {r} picked up twice"));
                }
                if s.service - req.request_time > cons.max_wait {
                    return Err(format!("request {r} waits {}s", s.service - req.request_time));
                }
                onboard.push(r);
                seats += req.party_size;
                if seats > snap.capacity {
                    return Err(format!("capacity exceeded after picking up {r}"));
                }
            }
            StopAction::Dropoff => {
                let Some(pos) = onboard.iter().position(|&x| x == r) else {
                    return Err(format!("request {r} dropped before pickup"));
                };
                onboard.remove(pos);
                seats -= req.party_size;
                let delay = s.arrival - req.request_time - net.time(req.origin, req.destination);
                if delay > cons.max_delay {
                    return Err(format!("request {r} delayed {delay}s"));
                }
            }
            StopAction::Rebalance => {}
        }
    }
    if !onboard.is_empty() {
        return Err(format!("requests {onboard:?} never dropped off"));
    }
    Ok(())
}

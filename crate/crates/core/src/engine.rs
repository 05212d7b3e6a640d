//! Receding-horizon simulation: every `delta` seconds new and re-queued
//! requests are matched to vehicles, the rest are rejected, idle vehicles
//! are rebalanced and the fleet moves on to the next decision instant.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anticipatory::{make_artificial, strip_artificial, ArtificialConfig, LengthTracker};
use crate::demand::{DemandTrace, Request, RequestId, RequestStatus};
use crate::error::{Error, Result};
use crate::fleet::{EventKind, ServiceEvent, Stop, StopAction, StopPlan, Vehicle, VehicleId};
use crate::matching::{
    enumerate_candidates, rebalance, solve_assignment, to_nanos, Coverable, EnumerationConfig,
    SolverCandidate, DEFAULT_NODE_BUDGET,
};
use crate::network::{Node, RoadNetwork, Secs, ZonePartition};
use crate::rates::{Observation, RateConfig, RateEstimator, RateField, RateKind};
use crate::routing::{
    audit_plan, reward, route_cost_terms, Constraints, CostParams, RoutedMatch, VehicleSnapshot,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    None,
    Rewards,
    Artificial,
    Both,
}

impl Mode {
    pub fn uses_rewards(self) -> bool {
        matches!(self, Mode::Rewards | Mode::Both)
    }

    pub fn uses_artificial(self) -> bool {
        matches!(self, Mode::Artificial | Mode::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Decision interval.
    pub delta: Secs,
    /// Period of operation; a multiple of `delta`.
    pub horizon: Secs,
    pub constraints: Constraints,
    pub costs: CostParams,
    pub mode: Mode,
    pub rates: RateConfig,
    pub artificial: ArtificialConfig,
    pub enumeration: EnumerationConfig,
    /// Overrides the mode-dependent default share kept by the pruning step.
    pub keep_fraction: Option<f64>,
    pub rebalance: bool,
    pub seed: u64,
    pub node_budget: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            delta: 60,
            horizon: 3600,
            constraints: Constraints::default(),
            costs: CostParams::default(),
            mode: Mode::None,
            rates: RateConfig::default(),
            artificial: ArtificialConfig::default(),
            enumeration: EnumerationConfig::default(),
            keep_fraction: None,
            rebalance: true,
            seed: 0,
            node_budget: DEFAULT_NODE_BUDGET,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.delta <= 0 {
            return bad(format!("decision interval must be positive, got {}", self.delta));
        }
        if self.horizon < 0 || self.horizon % self.delta != 0 {
            return bad(format!(
                "horizon {} is not a nonnegative multiple of the decision interval {}",
                self.horizon, self.delta
            ));
        }
        if self.constraints.max_wait < 0 || self.constraints.max_delay < 0 {
            return bad("waiting and delay limits must be nonnegative".into());
        }
        let c = &self.costs;
        let prices = [c.p_wait, c.p_ride, c.p_operator, c.p_reject];
        if prices.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return bad("prices must be finite and nonnegative".into());
        }
        if !c.theta.is_finite() || c.theta < 0.0 {
            return bad(format!("reward weight must be finite and nonnegative, got {}", c.theta));
        }
        if !self.mode.uses_rewards() && c.theta != 0.0 {
            return bad(format!("reward weight {} set but mode {:?} has no rewards", c.theta, self.mode));
        }
        if self.mode.uses_artificial() {
            self.artificial.validate()?;
            if self.rates.kind != RateKind::Generation {
                return bad("artificial requests are sampled from generation rates".into());
            }
        }
        if let Some(f) = self.keep_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("keep fraction must lie in (0, 1], got {f}"));
            }
        }
        if self.enumeration.max_trip_size == 0 {
            return bad("trips must hold at least one request".into());
        }
        Ok(())
    }

    pub fn effective_keep_fraction(&self) -> f64 {
        self.keep_fraction.unwrap_or(if self.mode.uses_artificial() { 0.5 } else { 1.0 })
    }

    pub fn stage_count(&self) -> usize {
        (self.horizon / self.delta) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LogKind {
    Pickup,
    Dropoff,
    Reject,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogEvent {
    pub time: Secs,
    pub kind: LogKind,
    pub request: RequestId,
    pub vehicle: Option<VehicleId>,
    pub node: Node,
    pub seats_used: Option<u32>,
}

impl From<&ServiceEvent> for LogEvent {
    fn from(e: &ServiceEvent) -> Self {
        LogEvent {
            time: e.time,
            kind: match e.kind {
                EventKind::Pickup => LogKind::Pickup,
                EventKind::Dropoff => LogKind::Dropoff,
            },
            request: e.request,
            vehicle: Some(e.vehicle),
            node: e.node,
            seats_used: Some(e.seats_used),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoneMismatch {
    pub vehicle_share: f64,
    pub request_share: f64,
    pub mismatch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mismatch {
    pub zones: Vec<ZoneMismatch>,
    pub mean: f64,
    pub median: f64,
    /// No request origins were observed; request shares are all zero.
    pub no_requests: bool,
}

/// Per-zone |vehicle share - request share|, using each vehicle's nearest node.
pub fn mismatch(zones: &ZonePartition, vehicle_nodes: &[Node], origins: &[Node]) -> Mismatch {
    let k = zones.zone_count();
    let shares = |nodes: &[Node]| {
        let mut s = vec![0.0; k];
        for &u in nodes {
            s[zones.zone_of[u]] += 1.0;
        }
        if !nodes.is_empty() {
            for x in &mut s {
                *x /= nodes.len() as f64;
            }
        }
        s
    };
    let v = shares(vehicle_nodes);
    let r = shares(origins);
    let zs: Vec<ZoneMismatch> = v
        .iter()
        .zip(&r)
        .map(|(&vehicle_share, &request_share)| ZoneMismatch {
            vehicle_share,
            request_share,
            mismatch: (vehicle_share - request_share).abs(),
        })
        .collect();
    let mut ms: Vec<f64> = zs.iter().map(|z| z.mismatch).collect();
    let mean = if k == 0 { 0.0 } else { ms.iter().sum::<f64>() / k as f64 };
    ms.sort_by(f64::total_cmp);
    let median = match k {
        0 => 0.0,
        _ if k % 2 == 1 => ms[k / 2],
        _ => 0.5 * (ms[k / 2 - 1] + ms[k / 2]),
    };
    Mismatch {
        zones: zs,
        mean,
        median,
        no_requests: origins.is_empty(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageMetrics {
    pub stage: usize,
    pub time: Secs,
    pub emerged: usize,
    pub reassignable: usize,
    pub candidates: usize,
    pub assigned: usize,
    pub rejected: usize,
    pub cumulative_rejected: usize,
    /// Real requests dropped off while moving to the next instant.
    pub served: usize,
    pub mean_wait: f64,
    pub mean_detour: f64,
    pub vht_hours: f64,
    pub objective: f64,
    pub optimal: bool,
    pub rebalanced: usize,
    pub artificial_injected: usize,
    pub artificial_assigned: usize,
    pub artificial_rejected: usize,
    pub mean_mismatch: f64,
    pub median_mismatch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneReport {
    pub zone: usize,
    pub vehicle_share: f64,
    pub request_share: f64,
    pub mismatch: f64,
    pub rejection_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub requests: usize,
    pub served: usize,
    pub rejected: usize,
    pub rejection_rate: f64,
    pub vht_hours: f64,
    pub mean_wait: f64,
    pub mean_detour: f64,
    pub user_cost: f64,
    pub rejection_cost: f64,
    pub operator_cost: f64,
    pub a_posteriori_cost: f64,
    /// Real requests rejected up to and including each stage.
    pub accumulated_rejections: Vec<usize>,
    pub mean_mismatch_end: f64,
    pub median_mismatch_end: f64,
    /// Mean of the per-stage mean mismatch over all stages.
    pub mean_mismatch_run: f64,
    pub zones: Vec<ZoneReport>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub stages: Vec<StageMetrics>,
    pub events: Vec<LogEvent>,
    /// Real requests in their terminal state.
    pub requests: Vec<Request>,
}

pub struct Simulation<'a> {
    net: &'a RoadNetwork,
    zones: ZonePartition,
    cfg: SimConfig,
    requests: Vec<Request>,
    real: usize,
    next: usize,
    vehicles: Vec<Vehicle>,
    estimator: Option<RateEstimator>,
    artificial_rng: ChaCha8Rng,
    lengths: LengthTracker,
    rejected_prev: Option<Vec<Node>>,
    rejected_origins: Vec<Node>,
    stages: Vec<StageMetrics>,
    events: Vec<LogEvent>,
    stage: usize,
    end_mismatch: Option<Mismatch>,
}

impl<'a> Simulation<'a> {
    pub fn new(
        net: &'a RoadNetwork,
        zones: ZonePartition,
        trace: &DemandTrace,
        vehicles: Vec<Vehicle>,
        history: Vec<DemandTrace>,
        cfg: SimConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if zones.zone_of.len() != net.node_count() {
            return Err(Error::Input("zone partition does not match the network".into()));
        }
        if let Some(r) = trace.requests.iter().find(|r| r.origin >= net.node_count() || r.destination >= net.node_count()) {
            return Err(Error::Input(format!("request {} refers to a node outside the network", r.id)));
        }
        for (i, v) in vehicles.iter().enumerate() {
            if v.id != i {
                return Err(Error::Input(format!("vehicle at position {i} has id {}", v.id)));
            }
        }
        let requests: Vec<Request> = trace
            .requests
            .iter()
            .filter(|r| r.request_time <= cfg.horizon)
            .cloned()
            .enumerate()
            .map(|(i, mut r)| {
                r.id = i;
                r
            })
            .collect();
        let needs_rates = cfg.mode != Mode::None;
        let estimator = if needs_rates {
            Some(RateEstimator::new(
                cfg.rates,
                Some(zones.clone()),
                history,
                cfg.seed ^ 0x5261_7465,
            )?)
        } else {
            None
        };
        let fallback = trace.mean_trip_time(net).unwrap_or(0.0);
        Ok(Simulation {
            net,
            zones,
            real: requests.len(),
            requests,
            next: 0,
            vehicles,
            estimator,
            artificial_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x4172_7469),
            lengths: LengthTracker::new(fallback),
            rejected_prev: None,
            rejected_origins: Vec::new(),
            stages: Vec::new(),
            events: Vec::new(),
            stage: 0,
            end_mismatch: None,
            cfg,
        })
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn requests(&self) -> &[Request] {
        &self.requests[..self.real]
    }

    pub fn stages(&self) -> &[StageMetrics] {
        &self.stages
    }

    pub fn is_finished(&self) -> bool {
        self.stage >= self.cfg.stage_count()
    }

    fn advance_all(&mut self, until: Secs) -> Vec<ServiceEvent> {
        let mut out = Vec::new();
        for v in &mut self.vehicles {
            out.extend(v.advance(self.net, &mut self.requests, until));
        }
        out
    }

    /// Runs the next decision stage and moves the fleet to the following instant.
    pub fn step(&mut self) -> Result<&StageMetrics> {
        if self.is_finished() {
            return Err(Error::Validation("simulation already finished".into()));
        }
        let cfg = self.cfg.clone();
        let net = self.net;
        self.stage += 1;
        let tau = self.stage as Secs * cfg.delta;
        let prev_tau = tau - cfg.delta;
        if self.stage == 1 {
            let early = self.advance_all(tau);
            debug_assert!(early.is_empty());
        }

        // new requests
        let mut emerged = Vec::new();
        while self.next < self.real && self.requests[self.next].request_time <= tau {
            let r = &mut self.requests[self.next];
            r.set_status(RequestStatus::WaitingAssignment)?;
            let len = net.time(r.origin, r.destination);
            self.lengths.push(r.request_time, len);
            emerged.push(self.next);
            self.next += 1;
        }
        let origins: Vec<Node> = emerged.iter().map(|&r| self.requests[r].origin).collect();
        let vehicle_nodes: Vec<Node> = self.vehicles.iter().map(|v| v.nearest_node()).collect();
        let mm = mismatch(&self.zones, &vehicle_nodes, &origins);

        // all assigned requests except each vehicle's next pickup go back to the pool
        let mut previous: Vec<(Vec<RequestId>, StopPlan)> = Vec::with_capacity(self.vehicles.len());
        let mut reassignable = Vec::new();
        for v in &mut self.vehicles {
            let next_pick = v
                .plan
                .stops
                .iter()
                .find(|s| s.action == StopAction::Pickup)
                .and_then(|s| s.request);
            let released: Vec<RequestId> = v.assigned.iter().copied().filter(|&r| Some(r) != next_pick).collect();
            if released.is_empty() {
                previous.push((Vec::new(), StopPlan::default()));
                continue;
            }
            let old = StopPlan {
                stops: v.plan.stops.iter().filter(|s| s.request.is_some()).cloned().collect(),
                total_length: 0,
            };
            let kept = StopPlan {
                stops: v
                    .plan
                    .stops
                    .iter()
                    .filter(|s| s.request.is_none_or(|r| !released.contains(&r)))
                    .cloned()
                    .collect(),
                total_length: 0,
            };
            v.set_plan(net, kept, &self.requests);
            for &r in &released {
                self.requests[r].set_status(RequestStatus::WaitingAssignment)?;
            }
            let mut trip = released.clone();
            trip.sort_unstable();
            reassignable.extend(released);
            previous.push((trip, old));
        }

        // rates
        let rates = match self.estimator.as_mut() {
            Some(est) => Some(est.update(
                net,
                Observation {
                    instant: tau,
                    previous_instant: prev_tau,
                    emerged: &origins,
                    rejected_prev: self.rejected_prev.as_deref(),
                },
            )?),
            None => None,
        };

        // artificial requests
        let mut injected = 0;
        if cfg.mode.uses_artificial() {
            let target = self.lengths.target(tau);
            let rates = rates.as_ref().expect("artificial mode estimates rates");
            let fake = make_artificial(
                net,
                rates,
                &cfg.artificial,
                tau,
                target,
                self.requests.len(),
                &mut self.artificial_rng,
            );
            injected = fake.len();
            for mut r in fake {
                r.set_status(RequestStatus::WaitingAssignment)?;
                self.requests.push(r);
            }
        }

        let mut pool: Vec<RequestId> = emerged.clone();
        pool.extend(&reassignable);
        pool.extend(self.real..self.requests.len());
        pool.sort_unstable();

        // candidates
        let snaps: Vec<VehicleSnapshot> = self
            .vehicles
            .iter()
            .map(|v| VehicleSnapshot::new(v, net, &self.requests))
            .collect();
        let reward_rates: Option<&RateField> = if cfg.mode.uses_rewards() { rates.as_ref() } else { None };
        let enum_cfg = EnumerationConfig {
            keep_fraction: cfg.effective_keep_fraction(),
            ..cfg.enumeration
        };
        let found = enumerate_candidates(
            net,
            &snaps,
            &pool,
            &self.requests,
            &cfg.constraints,
            &cfg.costs,
            reward_rates,
            &enum_cfg,
        );
        let mut by_key: BTreeMap<(VehicleId, Vec<RequestId>), RoutedMatch> = BTreeMap::new();
        for m in found {
            by_key.insert((m.vehicle, m.trip.clone()), m);
        }
        for (vid, (trip, old)) in previous.into_iter().enumerate() {
            if trip.is_empty() {
                continue;
            }
            if let Some(m) = self.keep_previous(&snaps[vid], trip, old, reward_rates) {
                let key = (m.vehicle, m.trip.clone());
                match by_key.get(&key) {
                    Some(e) if e.anticipatory_cost <= m.anticipatory_cost => {}
                    _ => {
                        by_key.insert(key, m);
                    }
                }
            }
        }
        let cands: Vec<RoutedMatch> = by_key.into_values().collect();

        // assignment
        let solver_cands: Vec<SolverCandidate> = cands
            .iter()
            .map(|m| SolverCandidate {
                vehicle: m.vehicle,
                trip: m.trip.clone(),
                cost: to_nanos(m.anticipatory_cost),
            })
            .collect();
        let coverable: Vec<Coverable> = pool
            .iter()
            .map(|&r| {
                let p = if self.requests[r].artificial {
                    cfg.artificial.gamma * cfg.costs.p_reject
                } else {
                    cfg.costs.p_reject
                };
                Coverable {
                    request: r,
                    penalty: Some(to_nanos(p)),
                }
            })
            .collect();
        let assignment = solve_assignment(&solver_cands, &coverable, cfg.node_budget);

        let mut used_vehicle = vec![false; self.vehicles.len()];
        let mut covered = vec![false; self.requests.len()];
        let mut assigned_real = 0;
        let mut artificial_assigned = 0;
        for &k in &assignment.selected {
            let m = &cands[k];
            if std::mem::replace(&mut used_vehicle[m.vehicle], true) {
                return Err(Error::Validation(format!("vehicle {} chosen twice", m.vehicle)));
            }
            audit_plan(net, &snaps[m.vehicle], &m.plan, &self.requests, &cfg.constraints)
                .map_err(|e| Error::Validation(format!("vehicle {}: {e}", m.vehicle)))?;
            for &r in &m.trip {
                if std::mem::replace(&mut covered[r], true) {
                    return Err(Error::Validation(format!("request {r} in two chosen trips")));
                }
                self.requests[r].set_status(RequestStatus::Assigned)?;
                if self.requests[r].artificial {
                    artificial_assigned += 1;
                } else {
                    assigned_real += 1;
                }
            }
            self.vehicles[m.vehicle].set_plan(net, m.plan.clone(), &self.requests);
        }
        let mut rejected_now = Vec::new();
        let mut artificial_rejected = 0;
        for &r in &assignment.rejected {
            self.requests[r].set_status(RequestStatus::Rejected)?;
            if self.requests[r].artificial {
                artificial_rejected += 1;
                continue;
            }
            let node = self.requests[r].origin;
            rejected_now.push(node);
            self.events.push(LogEvent {
                time: tau,
                kind: LogKind::Reject,
                request: r,
                vehicle: None,
                node,
                seats_used: None,
            });
        }

        // rebalancing
        let mut rebalanced = 0;
        if cfg.rebalance && !rejected_now.is_empty() {
            let idle: Vec<VehicleId> = self
                .vehicles
                .iter()
                .filter(|v| v.is_idle() && !used_vehicle[v.id])
                .map(|v| v.id)
                .collect();
            let from: Vec<Node> = idle.iter().map(|&v| self.vehicles[v].anchor().0).collect();
            for (i, j) in rebalance(net, &from, &rejected_now) {
                let plan = StopPlan {
                    stops: vec![Stop::rebalance(rejected_now[j])],
                    total_length: 0,
                };
                self.vehicles[idle[i]].set_plan(net, plan, &self.requests);
                rebalanced += 1;
            }
        }

        // move on
        let moving_before: Secs = self.vehicles.iter().map(|v| v.moving).sum();
        let service = self.advance_all(tau + cfg.delta);
        let moving_after: Secs = self.vehicles.iter().map(|v| v.moving).sum();
        strip_artificial(&mut self.vehicles, net, &self.requests);
        self.requests.truncate(self.real);
        let (served, mean_wait, mean_detour) = self.record_service(&service);

        self.rejected_origins.extend(&rejected_now);
        self.rejected_prev = Some(rejected_now);
        let cumulative_rejected = self.rejected_origins.len();
        self.stages.push(StageMetrics {
            stage: self.stage,
            time: tau,
            emerged: emerged.len(),
            reassignable: reassignable.len(),
            candidates: cands.len(),
            assigned: assigned_real,
            rejected: self.rejected_prev.as_ref().map_or(0, |r| r.len()),
            cumulative_rejected,
            served,
            mean_wait,
            mean_detour,
            vht_hours: (moving_after - moving_before) as f64 / 3600.0,
            objective: assignment.objective as f64 / crate::matching::NANOS_PER_DOLLAR,
            optimal: assignment.optimal,
            rebalanced,
            artificial_injected: injected,
            artificial_assigned,
            artificial_rejected,
            mean_mismatch: mm.mean,
            median_mismatch: mm.median,
        });
        self.end_mismatch = Some(mm);
        Ok(self.stages.last().unwrap())
    }

    /// The vehicle's previous route for the requests it gives back, as a candidate.
    fn keep_previous(
        &self,
        snap: &VehicleSnapshot,
        trip: Vec<RequestId>,
        old: StopPlan,
        rates: Option<&RateField>,
    ) -> Option<RoutedMatch> {
        let cfg = &self.cfg;
        let mut plan = old;
        plan.retime(self.net, snap.node, snap.time, &self.requests);
        let terms = route_cost_terms(self.net, snap, &trip, &plan, &self.requests, &cfg.constraints)?;
        let base_cost = terms.price(&cfg.costs);
        let r = rates.map_or(0.0, |f| reward(snap, &plan, &self.requests, f, cfg.costs.reward_node));
        Some(RoutedMatch {
            vehicle: snap.id,
            trip,
            plan,
            base_cost,
            reward: r,
            anticipatory_cost: base_cost - cfg.costs.theta * r,
        })
    }

    fn record_service(&mut self, service: &[ServiceEvent]) -> (usize, f64, f64) {
        let (mut served, mut waits, mut detours, mut picks) = (0usize, 0i64, 0i64, 0usize);
        for e in service {
            let r = &self.requests[e.request];
            match e.kind {
                EventKind::Pickup => {
                    picks += 1;
                    waits += e.time - r.request_time;
                }
                EventKind::Dropoff => {
                    served += 1;
                    detours += detour(self.net, r).unwrap_or(0);
                }
            }
            self.events.push(LogEvent::from(e));
        }
        let mean = |s: i64, n: usize| if n == 0 { 0.0 } else { s as f64 / n as f64 };
        (served, mean(waits, picks), mean(detours, served))
    }

    /// Serves everything still aboard or assigned once decisions have stopped.
    fn drain(&mut self) -> Result<()> {
        for v in &mut self.vehicles {
            if v.plan.stops.iter().any(|s| s.action == StopAction::Rebalance) {
                let plan = StopPlan {
                    stops: v.plan.stops.iter().filter(|s| s.request.is_some()).cloned().collect(),
                    total_length: 0,
                };
                v.set_plan(self.net, plan, &self.requests);
            }
        }
        let mut t = self.vehicles.iter().map(|v| v.clock).max().unwrap_or(0);
        let limit = t + self.cfg.delta + 4 * (self.cfg.constraints.max_wait + self.cfg.constraints.max_delay)
            + 8 * self.net.diameter();
        while self.vehicles.iter().any(|v| !v.plan.stops.is_empty()) {
            if t > limit {
                return Err(Error::Validation("vehicles failed to finish their plans".into()));
            }
            t += self.cfg.delta;
            let ev = self.advance_all(t);
            self.record_service(&ev);
        }
        Ok(())
    }

    /// Runs all remaining stages, serves what is left and summarizes.
    pub fn run(mut self) -> Result<RunOutput> {
        while !self.is_finished() {
            self.step()?;
        }
        self.drain()?;
        let report = self.report();
        Ok(RunOutput {
            report,
            stages: self.stages,
            events: self.events,
            requests: self.requests,
        })
    }

    fn report(&self) -> RunReport {
        let c = &self.cfg.costs;
        let reqs = &self.requests[..self.real];
        let served: Vec<&Request> = reqs.iter().filter(|r| r.status == RequestStatus::Completed).collect();
        let rejected = reqs.iter().filter(|r| r.status == RequestStatus::Rejected).count();
        let wait: i64 = served.iter().map(|r| r.waiting_time().unwrap()).sum();
        let det: i64 = served.iter().map(|r| detour(self.net, r).unwrap()).sum();
        let moving: Secs = self.vehicles.iter().map(|v| v.moving).sum();
        let user_cost = (c.p_wait * wait as f64 + c.p_ride * det as f64) / 3600.0;
        let rejection_cost = c.p_reject * rejected as f64;
        let operator_cost = c.p_operator * moving as f64 / 3600.0;
        let n = served.len();
        let mean = |s: i64| if n == 0 { 0.0 } else { s as f64 / n as f64 };
        let k = self.zones.zone_count();
        let mut rej_share = vec![0.0; k];
        for &u in &self.rejected_origins {
            rej_share[self.zones.zone_of[u]] += 1.0;
        }
        if !self.rejected_origins.is_empty() {
            for x in &mut rej_share {
                *x /= self.rejected_origins.len() as f64;
            }
        }
        let end = self.end_mismatch.clone().unwrap_or_else(|| mismatch(&self.zones, &[], &[]));
        let zones = (0..k)
            .map(|z| {
                let (vehicle_share, request_share, mm) = end
                    .zones
                    .get(z)
                    .map_or((0.0, 0.0, 0.0), |m| (m.vehicle_share, m.request_share, m.mismatch));
                ZoneReport {
                    zone: z,
                    vehicle_share,
                    request_share,
                    mismatch: mm,
                    rejection_share: rej_share[z],
                }
            })
            .collect();
        let mean_mismatch_run = if self.stages.is_empty() {
            0.0
        } else {
            self.stages.iter().map(|s| s.mean_mismatch).sum::<f64>() / self.stages.len() as f64
        };
        RunReport {
            requests: reqs.len(),
            served: n,
            rejected,
            rejection_rate: if reqs.is_empty() { 0.0 } else { rejected as f64 / reqs.len() as f64 },
            vht_hours: moving as f64 / 3600.0,
            mean_wait: mean(wait),
            mean_detour: mean(det),
            user_cost,
            rejection_cost,
            operator_cost,
            a_posteriori_cost: user_cost + rejection_cost + operator_cost,
            accumulated_rejections: self.stages.iter().map(|s| s.cumulative_rejected).collect(),
            mean_mismatch_end: end.mean,
            median_mismatch_end: end.median,
            mean_mismatch_run,
            zones,
        }
    }
}

/// In-vehicle time beyond the direct travel time, for a completed request.
pub fn detour(net: &RoadNetwork, r: &Request) -> Option<Secs> {
    Some(r.dropoff_time? - r.pickup_time? - net.time(r.origin, r.destination))
}

/// Convenience wrapper: builds a simulation and runs it to the end.
pub fn run(
    net: &RoadNetwork,
    zones: ZonePartition,
    trace: &DemandTrace,
    vehicles: Vec<Vehicle>,
    history: Vec<DemandTrace>,
    cfg: SimConfig,
) -> Result<RunOutput> {
    Simulation::new(net, zones, trace, vehicles, history, cfg)?.run()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AuditSummary {
    pub served: usize,
    pub rejected: usize,
    pub wait_violations: usize,
    pub delay_violations: usize,
    pub capacity_violations: usize,
    pub order_violations: usize,
}

impl AuditSummary {
    pub fn is_clean(&self) -> bool {
        self.wait_violations == 0
            && self.delay_violations == 0
            && self.capacity_violations == 0
            && self.order_violations == 0
    }
}

/// Replays the event log and checks every served request against the limits
/// and every vehicle's occupancy against its capacity.
pub fn audit_events(
    net: &RoadNetwork,
    requests: &[Request],
    events: &[LogEvent],
    capacity: &dyn Fn(VehicleId) -> u32,
    cons: &Constraints,
) -> AuditSummary {
    let mut s = AuditSummary::default();
    let mut picked: BTreeMap<RequestId, (Secs, VehicleId)> = BTreeMap::new();
    let mut seats: BTreeMap<VehicleId, u32> = BTreeMap::new();
    let mut done = vec![false; requests.len()];
    let mut ordered: Vec<&LogEvent> = events.iter().collect();
    ordered.sort_by_key(|e| e.time);
    for e in ordered {
        let Some(r) = requests.get(e.request) else {
            s.order_violations += 1;
            continue;
        };
        match e.kind {
            LogKind::Reject => s.rejected += 1,
            LogKind::Pickup => {
                let v = e.vehicle.unwrap_or(usize::MAX);
                if e.time - r.request_time > cons.max_wait {
                    s.wait_violations += 1;
                }
                if picked.insert(e.request, (e.time, v)).is_some() || e.time < r.request_time {
                    s.order_violations += 1;
                }
                let used = seats.entry(v).or_default();
                *used += r.party_size;
                if *used > capacity(v) {
                    s.capacity_violations += 1;
                }
            }
            LogKind::Dropoff => {
                let v = e.vehicle.unwrap_or(usize::MAX);
                match picked.get(&e.request) {
                    Some(&(_, pv)) if pv == v && !done[e.request] => {}
                    _ => s.order_violations += 1,
                }
                done[e.request] = true;
                let used = seats.entry(v).or_default();
                *used = used.saturating_sub(r.party_size);
                let delay = e.time - r.request_time - net.time(r.origin, r.destination);
                if delay > cons.max_delay {
                    s.delay_violations += 1;
                }
                s.served += 1;
            }
        }
    }
    s
}

impl RunOutput {
    pub fn stages_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for s in &self.stages {
            w.serialize(s).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }

    pub fn zones_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for z in &self.report.zones {
            w.serialize(z).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }

    /// One line per event: `time kind request vehicle node seats`, `-` when absent.
    pub fn events_log(&self, net: &RoadNetwork) -> String {
        let mut out = String::new();
        for e in &self.events {
            let kind = match e.kind {
                LogKind::Pickup => "pickup",
                LogKind::Dropoff => "dropoff",
                LogKind::Reject => "reject",
            };
            let v = e.vehicle.map_or("-".to_string(), |v| v.to_string());
            let seats = e.seats_used.map_or("-".to_string(), |s| s.to_string());
            let _ = writeln!(out, "{} {} {} {} {} {}", e.time, kind, e.request, v, net.external_id(e.node), seats);
        }
        out
    }

    /// Writes `report.json`, `stages.csv`, `zones.csv` and `events.log` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, net: &RoadNetwork) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, body: String| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(p, e))
        };
        put("report.json", serde_json::to_string_pretty(&self.report)? + "\n")?;
        put("stages.csv", self.stages_csv())?;
        put("zones.csv", self.zones_csv())?;
        put("events.log", self.events_log(net))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoneDelta {
    pub zone: usize,
    pub vehicle_share: f64,
    pub rejection_share: f64,
    pub mismatch: f64,
}

/// Per-zone differences `b - a`.
pub fn compare_reports(a: &RunReport, b: &RunReport) -> Result<Vec<ZoneDelta>> {
    if a.zones.len() != b.zones.len() || a.zones.iter().zip(&b.zones).any(|(x, y)| x.zone != y.zone) {
        return Err(Error::Input(format!(
            "reports use different zone partitions ({} vs {} zones)",
            a.zones.len(),
            b.zones.len()
        )));
    }
    Ok(a.zones
        .iter()
        .zip(&b.zones)
        .map(|(x, y)| ZoneDelta {
            zone: x.zone,
            vehicle_share: y.vehicle_share - x.vehicle_share,
            rejection_share: y.rejection_share - x.rejection_share,
            mismatch: y.mismatch - x.mismatch,
        })
        .collect())
}

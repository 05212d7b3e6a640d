//! Vehicles moving along planned stop sequences.
//!
//! A vehicle is either at a node or part-way along an edge. Plans are timed
//! from the vehicle's *anchor*: the node it is at, or the head of the edge it
//! is traversing together with the time it will get there. A vehicle never
//! turns around mid-edge.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::demand::{Request, RequestId, RequestStatus};
use crate::network::{Node, RoadNetwork, Secs};

pub type VehicleId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopAction {
    Pickup,
    Dropoff,
    Rebalance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stop {
    pub node: Node,
    pub action: StopAction,
    pub request: Option<RequestId>,
    /// Scheduled arrival at the node.
    pub arrival: Secs,
    /// When the stop is done: pickups wait for the request time, others leave on arrival.
    pub service: Secs,
}

impl Stop {
    pub fn pickup(r: &Request) -> Self {
        Stop {
            node: r.origin,
            action: StopAction::Pickup,
            request: Some(r.id),
            arrival: 0,
            service: 0,
        }
    }

    pub fn dropoff(r: &Request) -> Self {
        Stop {
            node: r.destination,
            action: StopAction::Dropoff,
            request: Some(r.id),
            arrival: 0,
            service: 0,
        }
    }

    pub fn rebalance(node: Node) -> Self {
        Stop {
            node,
            action: StopAction::Rebalance,
            request: None,
            arrival: 0,
            service: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StopPlan {
    pub stops: Vec<Stop>,
    /// Driving time from the anchor through the last stop, waits excluded.
    pub total_length: Secs,
}

impl StopPlan {
    pub fn is_empty(&self) -> bool {
        self.stops.is_empty()
    }

    /// Recomputes arrival and service times starting at `node` at time `start`.
    pub fn retime(&mut self, net: &RoadNetwork, node: Node, start: Secs, requests: &[Request]) {
        let mut at = node;
        let mut clock = start;
        let mut length = 0;
        for stop in &mut self.stops {
            let leg = net.time(at, stop.node);
            length += leg;
            stop.arrival = clock + leg;
            stop.service = match (stop.action, stop.request) {
                (StopAction::Pickup, Some(r)) => stop.arrival.max(requests[r].request_time),
                _ => stop.arrival,
            };
            clock = stop.service;
            at = stop.node;
        }
        self.total_length = length;
    }

    pub fn last_node(&self) -> Option<Node> {
        self.stops.last().map(|s| s.node)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    Node(Node),
    Edge {
        from: Node,
        to: Node,
        elapsed: Secs,
        length: Secs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Pickup,
    Dropoff,
}

/// Pickup or dropoff actually executed while advancing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ServiceEvent {
    pub time: Secs,
    pub kind: EventKind,
    pub request: RequestId,
    pub vehicle: VehicleId,
    pub node: Node,
    /// Seats occupied right after the event.
    pub seats_used: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CapacityViolation {
    /// Leg index (0 = before the first stop) where seats ran out.
    pub leg: usize,
}

/// Free seats on every leg of a route: before the first stop, then after each stop.
///
/// `deltas` holds the signed seat change at each stop.
pub fn seats_free_profile(
    capacity: u32,
    seats_used: u32,
    deltas: impl IntoIterator<Item = i64>,
) -> Result<Vec<u32>, CapacityViolation> {
    let cap = capacity as i64;
    let mut used = seats_used as i64;
    if used > cap {
        return Err(CapacityViolation { leg: 0 });
    }
    let mut out = vec![(cap - used) as u32];
    for (i, d) in deltas.into_iter().enumerate() {
        used += d;
        if used > cap || used < 0 {
            return Err(CapacityViolation { leg: i + 1 });
        }
        out.push((cap - used) as u32);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: VehicleId,
    pub capacity: u32,
    pub position: Position,
    /// Time up to which the vehicle has been advanced.
    pub clock: Secs,
    pub onboard: Vec<RequestId>,
    pub assigned: Vec<RequestId>,
    pub plan: StopPlan,
    /// Seconds spent moving so far.
    pub moving: Secs,
}

impl Vehicle {
    pub fn new(id: VehicleId, capacity: u32, node: Node) -> Self {
        Vehicle {
            id,
            capacity,
            position: Position::Node(node),
            clock: 0,
            onboard: Vec::new(),
            assigned: Vec::new(),
            plan: StopPlan::default(),
            moving: 0,
        }
    }

    /// Node and time from which a new plan can start.
    pub fn anchor(&self) -> (Node, Secs) {
        match self.position {
            Position::Node(u) => (u, self.clock),
            Position::Edge {
                to,
                elapsed,
                length,
                ..
            } => (to, self.clock + length - elapsed),
        }
    }

    /// Node the vehicle is closest to (in travel time along its edge).
    pub fn nearest_node(&self) -> Node {
        match self.position {
            Position::Node(u) => u,
            Position::Edge {
                from,
                to,
                elapsed,
                length,
            } => {
                if 2 * elapsed <= length {
                    from
                } else {
                    to
                }
            }
        }
    }

    /// No onboard or assigned requests (it may still be rebalancing).
    pub fn is_idle(&self) -> bool {
        self.onboard.is_empty() && self.assigned.is_empty()
    }

    pub fn requests(&self) -> impl Iterator<Item = RequestId> + '_ {
        self.onboard.iter().chain(self.assigned.iter()).copied()
    }

    pub fn seats_used(&self, requests: &[Request]) -> u32 {
        self.onboard.iter().map(|&r| requests[r].party_size).sum()
    }

    /// Free seats along the current plan.
    pub fn plan_seat_profile(&self, requests: &[Request]) -> Result<Vec<u32>, CapacityViolation> {
        seats_free_profile(
            self.capacity,
            self.seats_used(requests),
            self.plan.stops.iter().map(|s| seat_delta(s, requests)),
        )
    }

    /// Adopts a new plan, timed from the current anchor; `assigned` becomes
    /// the requests whose pickup is in the plan.
    pub fn set_plan(&mut self, net: &RoadNetwork, mut plan: StopPlan, requests: &[Request]) {
        let (node, t) = self.anchor();
        plan.retime(net, node, t, requests);
        self.assigned = plan
            .stops
            .iter()
            .filter(|s| s.action == StopAction::Pickup)
            .filter_map(|s| s.request)
            .collect();
        self.plan = plan;
    }

    /// Moves the vehicle along its plan until `until`, executing every stop
    /// reached on the way. Artificial pickups are never executed: the vehicle
    /// waits at such a stop for the rest of the interval.
    pub fn advance(
        &mut self,
        net: &RoadNetwork,
        requests: &mut [Request],
        until: Secs,
    ) -> Vec<ServiceEvent> {
        let mut events = Vec::new();
        while self.clock < until {
            match self.position {
                Position::Edge {
                    from,
                    to,
                    elapsed,
                    length,
                } => {
                    let remaining = length - elapsed;
                    if self.clock + remaining <= until {
                        self.clock += remaining;
                        self.moving += remaining;
                        self.position = Position::Node(to);
                    } else {
                        let dt = until - self.clock;
                        self.clock = until;
                        self.moving += dt;
                        self.position = Position::Edge {
                            from,
                            to,
                            elapsed: elapsed + dt,
                            length,
                        };
                    }
                }
                Position::Node(u) => {
                    let Some(stop) = self.plan.stops.first().cloned() else {
                        self.clock = until;
                        break;
                    };
                    if stop.node != u {
                        let hop = net.path(u, stop.node).node_sequence[1];
                        self.position = Position::Edge {
                            from: u,
                            to: hop,
                            elapsed: 0,
                            length: net.time(u, hop),
                        };
                        continue;
                    }
                    if !self.serve(stop, requests, until, &mut events) {
                        self.clock = until;
                        break;
                    }
                }
            }
        }
        // stops at the current node are served even when the clock already reached `until`
        while let (Position::Node(u), Some(stop)) = (self.position, self.plan.stops.first().cloned()) {
            if stop.node != u || !self.serve(stop, requests, until, &mut events) {
                break;
            }
        }
        events
    }

    /// Serves the head stop at the current node; false when it must wait past `until`.
    fn serve(
        &mut self,
        stop: Stop,
        requests: &mut [Request],
        until: Secs,
        events: &mut Vec<ServiceEvent>,
    ) -> bool {
        match (stop.action, stop.request) {
            (StopAction::Pickup, Some(r)) => {
                let req = &mut requests[r];
                if req.artificial {
                    return false;
                }
                let t = self.clock.max(req.request_time);
                if t > until {
                    return false;
                }
                self.clock = t;
                req.set_status(RequestStatus::Onboard)
                    .expect("pickup of an assigned request");
                req.pickup_time = Some(t);
                self.assigned.retain(|&x| x != r);
                self.onboard.push(r);
                events.push(ServiceEvent {
                    time: t,
                    kind: EventKind::Pickup,
                    request: r,
                    vehicle: self.id,
                    node: stop.node,
                    seats_used: self.seats_used(requests),
                });
            }
            (StopAction::Dropoff, Some(r)) => {
                let req = &mut requests[r];
                req.set_status(RequestStatus::Completed)
                    .expect("dropoff of an onboard request");
                req.dropoff_time = Some(self.clock);
                self.onboard.retain(|&x| x != r);
                events.push(ServiceEvent {
                    time: self.clock,
                    kind: EventKind::Dropoff,
                    request: r,
                    vehicle: self.id,
                    node: stop.node,
                    seats_used: self.seats_used(requests),
                });
            }
            _ => {}
        }
        self.plan.stops.remove(0);
        true
    }
}

pub(crate) fn seat_delta(stop: &Stop, requests: &[Request]) -> i64 {
    match (stop.action, stop.request) {
        (StopAction::Pickup, Some(r)) => requests[r].party_size as i64,
        (StopAction::Dropoff, Some(r)) => -(requests[r].party_size as i64),
        _ => 0,
    }
}

/// Where vehicles start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Placement {
    /// Explicit external node ids, cycled if shorter than the fleet.
    Nodes { nodes: Vec<u64> },
    /// Uniformly random nodes.
    Uniform,
    /// Random nodes drawn proportionally to the given per-node weights.
    Weighted { weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    pub count: usize,
    pub capacity: u32,
    pub placement: Placement,
    #[serde(default)]
    pub seed: u64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        FleetConfig {
            count: 1000,
            capacity: 3,
            placement: Placement::Uniform,
            seed: 0,
        }
    }
}

pub fn build_fleet(cfg: &FleetConfig, net: &RoadNetwork) -> crate::Result<Vec<Vehicle>> {
    use crate::error::Error;
    if cfg.capacity == 0 {
        return Err(Error::Config("vehicle capacity must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = net.node_count();
    let nodes: Vec<Node> = match &cfg.placement {
        Placement::Nodes { nodes } => {
            if nodes.is_empty() && cfg.count > 0 {
                return Err(Error::Config("explicit placement lists no nodes".into()));
            }
            let ix: Vec<Node> = nodes.iter().map(|&id| net.node_of(id)).collect::<crate::Result<_>>()?;
            (0..cfg.count).map(|i| ix[i % ix.len()]).collect()
        }
        Placement::Uniform => {
            let all: Vec<Node> = (0..n).collect();
            (0..cfg.count)
                .map(|_| *all.choose(&mut rng).expect("network has nodes"))
                .collect()
        }
        Placement::Weighted { weights } => {
            use rand::distr::weighted::WeightedIndex;
            use rand::distr::Distribution;
            if weights.len() != n {
                return Err(Error::Config(format!(
                    "placement has {} weights for {} nodes",
                    weights.len(),
                    n
                )));
            }
            let dist = WeightedIndex::new(weights)
                .map_err(|e| Error::Config(format!("placement weights: {e}")))?;
            (0..cfg.count).map(|_| dist.sample(&mut rng)).collect()
        }
    };
    Ok(nodes
        .into_iter()
        .enumerate()
        .map(|(i, u)| Vehicle::new(i, cfg.capacity, u))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkSpec;

    /// 0 -40s-> 1 -40s-> 2, both directions.
    fn net() -> RoadNetwork {
        let mut spec = NetworkSpec::default();
        spec.node(0, 0.0, 0.0).node(1, 1.0, 0.0).node(2, 2.0, 0.0);
        spec.road(0, 1, 40).road(1, 2, 40);
        RoadNetwork::build(&spec).unwrap()
    }

    fn assigned(id: RequestId, o: Node, d: Node, t: Secs) -> Request {
        let mut r = Request::new(id, o, d, t);
        r.set_status(RequestStatus::WaitingAssignment).unwrap();
        r.set_status(RequestStatus::Assigned).unwrap();
        r
    }

    #[test]
    fn seat_profile_of_sample_route() {
        assert_eq!(seats_free_profile(3, 1, [2, -1, -2]).unwrap(), vec![2, 0, 1, 3]);
        assert_eq!(seats_free_profile(4, 0, []).unwrap(), vec![4]);
        assert_eq!(
            seats_free_profile(1, 0, [1, 1, -1, -1]),
            Err(CapacityViolation { leg: 2 })
        );
    }

    #[test]
    fn idle_vehicle_stays_put() {
        let net = net();
        let mut v = Vehicle::new(0, 3, 1);
        let events = v.advance(&net, &mut [], 60);
        assert!(events.is_empty());
        assert_eq!(v.position, Position::Node(1));
        assert_eq!(v.clock, 60);
        assert_eq!(v.moving, 0);
    }

    #[test]
    fn pickup_within_interval() {
        let net = net();
        // vehicle at node 0, pickup at node 1 is 40 s away
        let mut reqs = vec![assigned(0, 1, 2, 0)];
        let mut v = Vehicle::new(0, 3, 0);
        let plan = StopPlan {
            stops: vec![Stop::pickup(&reqs[0]), Stop::dropoff(&reqs[0])],
            total_length: 0,
        };
        v.set_plan(&net, plan, &reqs);
        assert_eq!(v.plan.stops[0].arrival, 40);
        assert_eq!(v.plan.total_length, 80);
        let events = v.advance(&net, &mut reqs, 60);
        assert_eq!(events.len(), 1);
        assert_eq!(reqs[0].status, RequestStatus::Onboard);
        assert_eq!(reqs[0].pickup_time, Some(40));
        // 20 s along edge 1 -> 2
        assert_eq!(
            v.position,
            Position::Edge {
                from: 1,
                to: 2,
                elapsed: 20,
                length: 40
            }
        );
        assert_eq!(v.anchor(), (2, 80));
        let events = v.advance(&net, &mut reqs, 120);
        assert_eq!(events[0].kind, EventKind::Dropoff);
        assert_eq!(reqs[0].dropoff_time, Some(80));
        assert!(v.is_idle());
        assert_eq!(v.moving, 80);
    }

    #[test]
    fn artificial_pickup_blocks() {
        let net = net();
        let mut reqs = vec![assigned(0, 1, 2, 30)];
        reqs[0].artificial = true;
        let mut v = Vehicle::new(0, 3, 0);
        let plan = StopPlan {
            stops: vec![Stop::pickup(&reqs[0]), Stop::dropoff(&reqs[0])],
            total_length: 0,
        };
        v.set_plan(&net, plan, &reqs);
        let events = v.advance(&net, &mut reqs, 120);
        assert!(events.is_empty());
        assert_eq!(v.position, Position::Node(1));
        assert_eq!(v.moving, 40);
        assert_eq!(reqs[0].status, RequestStatus::Assigned);
    }

    #[test]
    fn fleet_placement() {
        let net = net();
        let cfg = FleetConfig {
            count: 5,
            capacity: 2,
            placement: Placement::Nodes { nodes: vec![2, 0] },
            seed: 0,
        };
        let f = build_fleet(&cfg, &net).unwrap();
        assert_eq!(
            f.iter().map(|v| v.nearest_node()).collect::<Vec<_>>(),
            vec![2, 0, 2, 0, 2]
        );
        let cfg = FleetConfig {
            placement: Placement::Uniform,
            seed: 9,
            ..cfg
        };
        assert_eq!(build_fleet(&cfg, &net).unwrap(), build_fleet(&cfg, &net).unwrap());
    }
}

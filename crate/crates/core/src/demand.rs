//! Requests, their status lifecycle, demand traces and synthetic demand.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Node, RoadNetwork, Secs};

pub type RequestId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestStatus {
    Emerged,
    WaitingAssignment,
    Assigned,
    Onboard,
    Completed,
    Rejected,
}

impl RequestStatus {
    pub fn can_become(self, next: RequestStatus) -> bool {
        use RequestStatus::*;
        matches!(
            (self, next),
            (Emerged, WaitingAssignment)
                | (WaitingAssignment, Assigned)
                | (WaitingAssignment, Rejected)
                | (Assigned, WaitingAssignment)
                | (Assigned, Onboard)
                | (Onboard, Completed)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, RequestStatus::Completed | RequestStatus::Rejected)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: RequestId,
    pub origin: Node,
    pub destination: Node,
    pub request_time: Secs,
    pub party_size: u32,
    pub status: RequestStatus,
    pub artificial: bool,
    pub pickup_time: Option<Secs>,
    pub dropoff_time: Option<Secs>,
}

impl Request {
    pub fn new(id: RequestId, origin: Node, destination: Node, request_time: Secs) -> Self {
        Request {
            id,
            origin,
            destination,
            request_time,
            party_size: 1,
            status: RequestStatus::Emerged,
            artificial: false,
            pickup_time: None,
            dropoff_time: None,
        }
    }

    /// Moves to `next`, refusing transitions outside the lifecycle.
    pub fn set_status(&mut self, next: RequestStatus) -> Result<()> {
        if !self.status.can_become(next) || (self.artificial && next == RequestStatus::Onboard) {
            return Err(Error::Validation(format!(
                "request {}: illegal transition {:?} -> {:?}",
                self.id, self.status, next
            )));
        }
        self.status = next;
        Ok(())
    }

    pub fn waiting_time(&self) -> Option<Secs> {
        self.pickup_time.map(|p| p - self.request_time)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DemandTrace {
    pub requests: Vec<Request>,
    pub period_of_operation: Secs,
}

impl DemandTrace {
    pub fn new(mut requests: Vec<Request>, period_of_operation: Secs) -> Self {
        requests.sort_by_key(|r| r.request_time);
        for (i, r) in requests.iter_mut().enumerate() {
            r.id = i;
        }
        DemandTrace {
            requests,
            period_of_operation,
        }
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    /// Requests with `t1 < request_time <= t2`.
    pub fn window(&self, t1: Secs, t2: Secs) -> impl Iterator<Item = &Request> {
        let lo = self.requests.partition_point(|r| r.request_time <= t1);
        let hi = self.requests.partition_point(|r| r.request_time <= t2);
        self.requests[lo..hi].iter()
    }

    /// Mean shortest-path length of the trace's trips.
    pub fn mean_trip_time(&self, net: &RoadNetwork) -> Option<f64> {
        if self.requests.is_empty() {
            return None;
        }
        let total: Secs = self
            .requests
            .iter()
            .map(|r| net.time(r.origin, r.destination))
            .sum();
        Some(total as f64 / self.requests.len() as f64)
    }

    pub fn to_csv(&self, net: &RoadNetwork) -> String {
        let mut out = String::from("time_s,origin,destination,party\n");
        for r in &self.requests {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.request_time,
                net.external_id(r.origin),
                net.external_id(r.destination),
                r.party_size
            ));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>, net: &RoadNetwork) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv(net).as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    time_s: Secs,
    origin: u64,
    destination: u64,
    #[serde(default)]
    party: Option<u32>,
}

/// Reads a `time_s,origin,destination,party` CSV. The period of operation is
/// the latest request time; callers usually override it from configuration.
pub fn load_trace(path: impl AsRef<Path>, net: &RoadNetwork) -> Result<DemandTrace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace(&text, net)
}

pub fn parse_trace(text: &str, net: &RoadNetwork) -> Result<DemandTrace> {
    if text.trim().is_empty() {
        return Ok(DemandTrace::default());
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut requests = Vec::new();
    for (i, row) in reader.deserialize::<TraceRow>().enumerate() {
        let row = row?;
        let rowno = i + 1;
        let node = |id: u64| {
            net.node_of(id)
                .map_err(|_| Error::Validation(format!("trace row {rowno}: unknown node id {id}")))
        };
        let origin = node(row.origin)?;
        let destination = node(row.destination)?;
        if origin == destination {
            return Err(Error::Validation(format!(
                "trace row {rowno}: origin equals destination ({})",
                row.origin
            )));
        }
        if row.time_s < 0 {
            return Err(Error::Validation(format!(
                "trace row {rowno}: negative request time {}",
                row.time_s
            )));
        }
        let party = row.party.unwrap_or(1);
        if party == 0 {
            return Err(Error::Validation(format!("trace row {rowno}: party size 0")));
        }
        let mut r = Request::new(0, origin, destination, row.time_s);
        r.party_size = party;
        requests.push(r);
    }
    let period = requests.iter().map(|r| r.request_time).max().unwrap_or(0);
    Ok(DemandTrace::new(requests, period))
}

/// One trace per file, files taken in name order. Empty directory is an error.
pub fn load_history(dir: impl AsRef<Path>, net: &RoadNetwork) -> Result<Vec<DemandTrace>> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Input(format!(
            "historical directory {} has no .csv days",
            dir.display()
        )));
    }
    files.iter().map(|f| load_trace(f, net)).collect()
}

/// Spatial demand profile over nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    pub origin_weights: Vec<f64>,
    pub destination_weights: Vec<f64>,
    pub count: usize,
    pub period: Secs,
}

impl DemandProfile {
    /// Builds node weights from groups of nodes sharing a weight; each group's
    /// weight is spread evenly over its nodes.
    pub fn from_regions(
        n: usize,
        regions: &[(&[Node], f64, f64)],
        count: usize,
        period: Secs,
    ) -> Self {
        let mut origin_weights = vec![0.0; n];
        let mut destination_weights = vec![0.0; n];
        for &(nodes, ow, dw) in regions {
            for &u in nodes {
                origin_weights[u] += ow / nodes.len() as f64;
                destination_weights[u] += dw / nodes.len() as f64;
            }
        }
        DemandProfile {
            origin_weights,
            destination_weights,
            count,
            period,
        }
    }

    /// Everyone starts on the boundary and travels to the center.
    pub fn circular(n: usize, boundary: &[Node], center: Node, count: usize, period: Secs) -> Self {
        Self::from_regions(
            n,
            &[(boundary, 1.0, 0.0), (std::slice::from_ref(&center), 0.0, 1.0)],
            count,
            period,
        )
    }
}

/// Samples `count` requests from the profile with uniform integer times on
/// `[0, period]`.
pub fn generate_synthetic(profile: &DemandProfile, seed: u64) -> Result<DemandTrace> {
    if profile.count == 0 {
        return Ok(DemandTrace::new(Vec::new(), profile.period));
    }
    let weights_ok = |w: &[f64]| w.iter().all(|x| x.is_finite() && *x >= 0.0) && w.iter().any(|x| *x > 0.0);
    if !weights_ok(&profile.origin_weights) || !weights_ok(&profile.destination_weights) {
        return Err(Error::Input(
            "demand profile weights must be nonnegative with positive mass".into(),
        ));
    }
    if profile.period < 0 {
        return Err(Error::Input("demand period must be nonnegative".into()));
    }
    let origins = WeightedIndex::new(&profile.origin_weights)
        .map_err(|e| Error::Input(format!("origin weights: {e}")))?;
    let dests = WeightedIndex::new(&profile.destination_weights)
        .map_err(|e| Error::Input(format!("destination weights: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut requests = Vec::with_capacity(profile.count);
    for _ in 0..profile.count {
        let origin = origins.sample(&mut rng);
        let destination = sample_other(&profile.destination_weights, &dests, origin, &mut rng)?;
        let t = rng.random_range(0..=profile.period);
        requests.push(Request::new(0, origin, destination, t));
    }
    Ok(DemandTrace::new(requests, profile.period))
}

fn sample_other(
    weights: &[f64],
    dist: &WeightedIndex<f64>,
    avoid: Node,
    rng: &mut impl Rng,
) -> Result<Node> {
    let total: f64 = weights.iter().sum();
    if weights[avoid] >= total {
        return Err(Error::Input(format!(
            "destination weight is concentrated on origin node {avoid}"
        )));
    }
    loop {
        let d = dist.sample(rng);
        if d != avoid {
            return Ok(d);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkSpec;

    fn net() -> RoadNetwork {
        let mut spec = NetworkSpec::default();
        for i in 0..4 {
            spec.node(10 + i, i as f64, 0.0);
        }
        for i in 0..4u64 {
            spec.road(10 + i, 10 + (i + 1) % 4, 30);
        }
        RoadNetwork::build(&spec).unwrap()
    }

    #[test]
    fn empty_trace() {
        let t = parse_trace("", &net()).unwrap();
        assert!(t.is_empty());
        let t = parse_trace("time_s,origin,destination,party\n", &net()).unwrap();
        assert!(t.is_empty());
    }

    #[test]
    fn trace_is_sorted() {
        let csv = "time_s,origin,destination,party\n90,10,11,1\n30,11,12,1\n60,12,13,2\n";
        let t = parse_trace(csv, &net()).unwrap();
        let times: Vec<_> = t.requests.iter().map(|r| r.request_time).collect();
        assert_eq!(times, vec![30, 60, 90]);
        assert_eq!(t.requests[1].party_size, 2);
        assert_eq!(t.requests.iter().map(|r| r.id).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn trace_rejects_bad_rows() {
        let same = "time_s,origin,destination,party\n10,11,11,1\n";
        let err = parse_trace(same, &net()).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("row 1")));
        let unknown = "time_s,origin,destination,party\n10,11,12,1\n20,11,99,1\n";
        let err = parse_trace(unknown, &net()).unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("row 2") && m.contains("99")));
    }

    #[test]
    fn lifecycle() {
        let mut r = Request::new(0, 0, 1, 0);
        assert!(r.set_status(RequestStatus::Onboard).is_err());
        r.set_status(RequestStatus::WaitingAssignment).unwrap();
        r.set_status(RequestStatus::Assigned).unwrap();
        r.set_status(RequestStatus::WaitingAssignment).unwrap();
        r.set_status(RequestStatus::Assigned).unwrap();
        r.set_status(RequestStatus::Onboard).unwrap();
        r.set_status(RequestStatus::Completed).unwrap();
        assert!(r.set_status(RequestStatus::Rejected).is_err());

        let mut a = Request::new(1, 0, 1, 0);
        a.artificial = true;
        a.set_status(RequestStatus::WaitingAssignment).unwrap();
        a.set_status(RequestStatus::Assigned).unwrap();
        assert!(a.set_status(RequestStatus::Onboard).is_err());
    }

    #[test]
    fn circular_profile_sends_everyone_to_center() {
        let boundary = [1, 2, 3];
        let p = DemandProfile::circular(4, &boundary, 0, 10, 600);
        let t = generate_synthetic(&p, 7).unwrap();
        assert_eq!(t.len(), 10);
        assert!(t.requests.iter().all(|r| boundary.contains(&r.origin) && r.destination == 0));
        assert!(t.requests.iter().all(|r| (0..=600).contains(&r.request_time)));
    }

    #[test]
    fn synthetic_is_deterministic() {
        let p = DemandProfile::from_regions(4, &[(&[0, 1, 2, 3], 1.0, 1.0)], 25, 300);
        assert_eq!(generate_synthetic(&p, 3).unwrap(), generate_synthetic(&p, 3).unwrap());
        assert_ne!(generate_synthetic(&p, 3).unwrap(), generate_synthetic(&p, 4).unwrap());
        let empty = DemandProfile { count: 0, ..p.clone() };
        assert!(generate_synthetic(&empty, 1).unwrap().is_empty());
        let zero = DemandProfile {
            origin_weights: vec![0.0; 4],
            ..p
        };
        assert!(matches!(generate_synthetic(&zero, 1), Err(Error::Input(_))));
    }

    #[test]
    fn window_is_half_open() {
        let reqs = (0..5).map(|i| Request::new(0, 0, 1, i * 10)).collect();
        let t = DemandTrace::new(reqs, 40);
        let w: Vec<_> = t.window(10, 30).map(|r| r.request_time).collect();
        assert_eq!(w, vec![20, 30]);
    }
}

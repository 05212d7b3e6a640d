//! Artificial future requests: sampled from a generation rate field, offered
//! to the assignment with a reduced rejection penalty, and removed from every
//! plan once the vehicles have moved.

use std::collections::VecDeque;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::demand::{Request, RequestId};
use crate::error::{Error, Result};
use crate::fleet::{StopPlan, Vehicle};
use crate::network::{Node, RoadNetwork, Secs};
use crate::rates::RateField;

/// Half-width of the destination band, relative to the target trip length.
pub const LENGTH_BAND: f64 = 0.2;

/// Window over which real trip lengths are averaged.
pub const LENGTH_WINDOW: Secs = 1800;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArtificialConfig {
    /// Requests injected per stage.
    pub m: usize,
    /// Spacing of their request times.
    pub phi: Secs,
    /// Ratio of their rejection penalty to the real one.
    pub gamma: f64,
}

impl Default for ArtificialConfig {
    fn default() -> Self {
        ArtificialConfig {
            m: 50,
            phi: 60,
            gamma: 1.0 / 60.0,
        }
    }
}

impl ArtificialConfig {
    pub fn validate(&self) -> Result<()> {
        if self.phi <= 0 {
            return Err(Error::Config("artificial spacing must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!(
                "artificial penalty ratio must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// Rolling mean of direct trip times of recent real requests.
#[derive(Debug, Clone)]
pub struct LengthTracker {
    fallback: f64,
    recent: VecDeque<(Secs, Secs)>,
    sum: i64,
}

impl LengthTracker {
    pub fn new(fallback: f64) -> Self {
        LengthTracker {
            fallback,
            recent: VecDeque::new(),
            sum: 0,
        }
    }

    pub fn push(&mut self, request_time: Secs, length: Secs) {
        self.recent.push_back((request_time, length));
        self.sum += length;
    }

    /// Mean over requests with time in `(now - window, now]`, else the fallback.
    pub fn target(&mut self, now: Secs) -> f64 {
        while let Some(&(t, len)) = self.recent.front() {
            if t > now - LENGTH_WINDOW {
                break;
            }
            self.recent.pop_front();
            self.sum -= len;
        }
        if self.recent.is_empty() {
            self.fallback
        } else {
            self.sum as f64 / self.recent.len() as f64
        }
    }
}

/// Samples `m` artificial requests at times `t + k * phi` (k = 1..=m) with
/// origins drawn proportionally to `rates` and destinations drawn uniformly
/// among nodes whose travel time from the origin is near `length_target`.
/// Ids start at `first_id`.
pub fn make_artificial(
    net: &RoadNetwork,
    rates: &RateField,
    cfg: &ArtificialConfig,
    t: Secs,
    length_target: f64,
    first_id: RequestId,
    rng: &mut impl Rng,
) -> Vec<Request> {
    if cfg.m == 0 || !(rates.total() > 0.0) || net.node_count() < 2 {
        return Vec::new();
    }
    let origins = WeightedIndex::new(&rates.values).expect("positive finite mass");
    let mut out = Vec::with_capacity(cfg.m);
    for k in 1..=cfg.m {
        let o = origins.sample(rng);
        let d = sample_destination(net, o, length_target, rng);
        let mut r = Request::new(first_id + out.len(), o, d, t + k as Secs * cfg.phi);
        r.artificial = true;
        out.push(r);
    }
    out
}

fn sample_destination(net: &RoadNetwork, o: Node, target: f64, rng: &mut impl Rng) -> Node {
    let times: Vec<(Node, f64)> = (0..net.node_count())
        .filter(|&u| u != o)
        .map(|u| (u, net.time(o, u) as f64))
        .collect();
    let mut band = LENGTH_BAND * target.max(1.0);
    loop {
        let pool: Vec<Node> = times
            .iter()
            .filter(|(_, tt)| (tt - target).abs() <= band)
            .map(|&(u, _)| u)
            .collect();
        if let Some(&d) = pool.choose(rng) {
            return d;
        }
        band *= 2.0;
    }
}

/// Removes every artificial stop from every plan; vehicles carry on from
/// where they are. Returns how many vehicles had their plan changed.
pub fn strip_artificial(vehicles: &mut [Vehicle], net: &RoadNetwork, requests: &[Request]) -> usize {
    let mut changed = 0;
    for v in vehicles.iter_mut() {
        let keep = |s: &crate::fleet::Stop| s.request.is_none_or(|r| !requests[r].artificial);
        if v.plan.stops.iter().all(keep) {
            continue;
        }
        let plan = StopPlan {
            stops: v.plan.stops.iter().filter(|s| keep(s)).cloned().collect(),
            total_length: 0,
        };
        v.set_plan(net, plan, requests);
        changed += 1;
    }
    changed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::Stop;
    use crate::network::NetworkSpec;
    use crate::rates::{RateKind, RateMethod};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line(n: u64) -> RoadNetwork {
        let mut spec = NetworkSpec::default();
        for i in 0..n {
            spec.node(i, i as f64, 0.0);
        }
        for i in 1..n {
            spec.road(i - 1, i, 60);
        }
        RoadNetwork::build(&spec).unwrap()
    }

    #[test]
    fn times_are_equidistant() {
        let net = line(5);
        let mut rates = RateField::zeros(5, RateKind::Generation, RateMethod::Basic, 600);
        rates.values[2] = 1.0;
        let cfg = ArtificialConfig {
            m: 3,
            phi: 60,
            gamma: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let reqs = make_artificial(&net, &rates, &cfg, 600, 120.0, 10, &mut rng);
        let times: Vec<_> = reqs.iter().map(|r| r.request_time).collect();
        assert_eq!(times, vec![660, 720, 780]);
        assert!(reqs.iter().all(|r| r.origin == 2 && r.artificial));
        assert!(reqs.iter().all(|r| r.destination == 0 || r.destination == 4));
        assert_eq!(reqs[0].id, 10);
    }

    #[test]
    fn nothing_without_mass_or_m() {
        let net = line(3);
        let rates = RateField::zeros(3, RateKind::Generation, RateMethod::Basic, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(make_artificial(&net, &rates, &ArtificialConfig::default(), 0, 60.0, 0, &mut rng).is_empty());
        let mut rates = rates;
        rates.values[0] = 1.0;
        let cfg = ArtificialConfig {
            m: 0,
            ..ArtificialConfig::default()
        };
        assert!(make_artificial(&net, &rates, &cfg, 0, 60.0, 0, &mut rng).is_empty());
    }

    #[test]
    fn band_widens_when_empty() {
        let net = line(3);
        let mut rates = RateField::zeros(3, RateKind::Generation, RateMethod::Basic, 0);
        rates.values[0] = 1.0;
        let cfg = ArtificialConfig {
            m: 20,
            phi: 60,
            gamma: 0.5,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // nothing near 1000 s; the band grows until it reaches both nodes
        let reqs = make_artificial(&net, &rates, &cfg, 0, 1000.0, 0, &mut rng);
        assert_eq!(reqs.len(), 20);
        assert!(reqs.iter().all(|r| r.destination != 0));
    }

    #[test]
    fn length_tracker_window() {
        let mut lt = LengthTracker::new(42.0);
        assert_eq!(lt.target(0), 42.0);
        lt.push(0, 100);
        lt.push(1000, 200);
        assert_eq!(lt.target(1000), 150.0);
        assert_eq!(lt.target(1800), 200.0);
        assert_eq!(lt.target(2800), 42.0);
    }

    #[test]
    fn strip_keeps_real_stops() {
        let net = line(4);
        let mut reqs = vec![Request::new(0, 0, 3, 0), Request::new(1, 1, 2, 60)];
        reqs[1].artificial = true;
        let mut v = Vehicle::new(0, 3, 0);
        let plan = StopPlan {
            stops: vec![Stop::pickup(&reqs[0]), Stop::pickup(&reqs[1]), Stop::dropoff(&reqs[0])],
            total_length: 0,
        };
        v.set_plan(&net, plan, &reqs);
        assert_eq!(strip_artificial(std::slice::from_mut(&mut v), &net, &reqs), 1);
        let kinds: Vec<_> = v.plan.stops.iter().map(|s| (s.request, s.arrival)).collect();
        assert_eq!(kinds, vec![(Some(0), 0), (Some(0), 180)]);
        assert_eq!(v.assigned, vec![0]);
        assert_eq!(strip_artificial(std::slice::from_mut(&mut v), &net, &reqs), 0);

        let mut w = Vehicle::new(1, 3, 2);
        w.set_plan(
            &net,
            StopPlan {
                stops: vec![Stop::pickup(&reqs[1])],
                total_length: 0,
            },
            &reqs,
        );
        strip_artificial(std::slice::from_mut(&mut w), &net, &reqs);
        assert!(w.plan.stops.is_empty());
        assert!(w.is_idle());
    }
}

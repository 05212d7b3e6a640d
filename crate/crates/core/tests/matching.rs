mod common;

use std::collections::BTreeSet;

use common::{oracle_assignment, random_assignment_case, random_cons, random_spec, rng};
use rand::Rng;
use ridepool::demand::Request;
use ridepool::fleet::Vehicle;
use ridepool::matching::{
    enumerate_candidates, export_ilp, min_cost_matching, solve_assignment, Coverable, EnumerationConfig,
    SolverCandidate, DEFAULT_NODE_BUDGET,
};
use ridepool::network::RoadNetwork;
use ridepool::routing::{best_route, CostParams, VehicleSnapshot};

fn check_solution(cands: &[SolverCandidate], reqs: &[Coverable], sel: &[usize], rejected: &[usize], objective: i64) {
    let mut vehicles = BTreeSet::new();
    let mut covered = BTreeSet::new();
    let mut total = 0;
    for &i in sel {
        assert!(vehicles.insert(cands[i].vehicle), "vehicle used twice");
        for &r in &cands[i].trip {
            assert!(covered.insert(r), "request covered twice");
        }
        total += cands[i].cost;
    }
    for q in reqs {
        let out = rejected.contains(&q.request);
        assert_ne!(out, covered.contains(&q.request));
        if out {
            total += q.penalty.expect("must-cover request rejected");
        }
    }
    assert_eq!(total, objective);
}

#[test]
fn assignment_matches_exhaustive_on_enumerated_candidates() {
    for seed in 0..120 {
        let (cands, reqs) = random_assignment_case(seed, 8, 4);
        let a = solve_assignment(&cands, &reqs, DEFAULT_NODE_BUDGET);
        assert!(a.optimal);
        assert_eq!(Some(a.objective), oracle_assignment(&cands, &reqs), "seed {seed}");
        check_solution(&cands, &reqs, &a.selected, &a.rejected, a.objective);
    }
}

#[test]
fn assignment_matches_exhaustive_on_random_costs() {
    for seed in 0..300 {
        let mut r = rng(5000 + seed);
        let nr = r.random_range(1..=7);
        let nv = r.random_range(1..=4);
        let reqs: Vec<Coverable> = (0..nr)
            .map(|q| Coverable {
                request: q * 3 + 1,
                penalty: if r.random_bool(0.1) { None } else { Some(r.random_range(0..100)) },
            })
            .collect();
        let mut cands = Vec::new();
        for v in 0..nv {
            for _ in 0..r.random_range(0..6) {
                let size = r.random_range(1..=3.min(nr));
                let mut trip: Vec<usize> = (0..nr).map(|q| q * 3 + 1).collect();
                while trip.len() > size {
                    trip.remove(r.random_range(0..trip.len()));
                }
                cands.push(SolverCandidate {
                    vehicle: v * 7,
                    trip,
                    cost: r.random_range(0..150),
                });
            }
        }
        let want = oracle_assignment(&cands, &reqs);
        let a = solve_assignment(&cands, &reqs, DEFAULT_NODE_BUDGET);
        match want {
            Some(w) => {
                assert_eq!(a.objective, w, "seed {seed}\n{}", export_ilp(&cands, &reqs));
                check_solution(&cands, &reqs, &a.selected, &a.rejected, a.objective);
            }
            // infeasible must-cover sets: nothing to compare
            None => {}
        }
    }
}

#[test]
fn enumeration_equals_brute_force() {
    for seed in 0..25 {
        let mut r = rng(700 + seed);
        let n = r.random_range(6..=10);
        let spec = random_spec(&mut r, n, n, 20, 90);
        let net = RoadNetwork::build(&spec).unwrap();
        let cons = random_cons(&mut r);
        let mut requests: Vec<Request> = (0..6)
            .map(|id| {
                let o = r.random_range(0..n);
                let d = (o + r.random_range(1..n)) % n;
                Request::new(id, o, d, 300 - r.random_range(0..60))
            })
            .collect();
        let mut vehicles: Vec<Vehicle> = (0..3).map(|i| Vehicle::new(i, r.random_range(1..=3), r.random_range(0..n))).collect();
        for v in &mut vehicles {
            v.advance(&net, &mut requests, 300);
        }
        let snaps: Vec<VehicleSnapshot> = vehicles.iter().map(|v| VehicleSnapshot::new(v, &net, &requests)).collect();
        let pool: Vec<usize> = (0..6).collect();
        let params = CostParams::default();
        let cfg = EnumerationConfig {
            keep_fraction: 1.0,
            max_trip_size: 3,
            max_candidates_per_vehicle: 10_000,
        };
        let got: BTreeSet<(usize, Vec<usize>, i64)> =
            enumerate_candidates(&net, &snaps, &pool, &requests, &cons, &params, None, &cfg)
                .into_iter()
                .map(|m| (m.vehicle, m.trip, (m.anticipatory_cost * 1e9).round() as i64))
                .collect();
        let mut want = BTreeSet::new();
        for s in &snaps {
            for mask in 1u32..64 {
                let trip: Vec<usize> = (0..6).filter(|i| mask & (1 << i) != 0).collect();
                if trip.len() > s.capacity as usize {
                    continue;
                }
                if let Some(m) = best_route(&net, s, &trip, &requests, &cons, &params, None) {
                    want.insert((s.id, trip, (m.anticipatory_cost * 1e9).round() as i64));
                }
            }
        }
        assert_eq!(got, want, "seed {seed}");
    }
}

/// Cheapest one-to-one matching of size min(rows, cols) by trying every injection.
fn brute_matching(cost: &[Vec<i64>]) -> i64 {
    let rows = cost.len();
    let cols = cost[0].len();
    fn go(i: usize, cost: &[Vec<i64>], used: &mut Vec<bool>, acc: i64, need: usize, got: usize, best: &mut i64) {
        if got == need {
            *best = (*best).min(acc);
            return;
        }
        if i == cost.len() || cost.len() - i < need - got {
            return;
        }
        go(i + 1, cost, used, acc, need, got, best);
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                go(i + 1, cost, used, acc + cost[i][j], need, got + 1, best);
                used[j] = false;
            }
        }
    }
    let mut best = i64::MAX;
    go(0, cost, &mut vec![false; cols], 0, rows.min(cols), 0, &mut best);
    best
}

#[test]
fn matching_matches_brute_force() {
    for seed in 0..200 {
        let mut r = rng(9000 + seed);
        let rows = r.random_range(1..=6);
        let cols = r.random_range(1..=6);
        let cost: Vec<Vec<i64>> = (0..rows).map(|_| (0..cols).map(|_| r.random_range(0..50)).collect()).collect();
        let m = min_cost_matching(&cost);
        assert_eq!(m.len(), rows.min(cols));
        let rs: BTreeSet<_> = m.iter().map(|p| p.0).collect();
        let cs: BTreeSet<_> = m.iter().map(|p| p.1).collect();
        assert_eq!((rs.len(), cs.len()), (m.len(), m.len()));
        let total: i64 = m.iter().map(|&(i, j)| cost[i][j]).sum();
        assert_eq!(total, brute_matching(&cost), "seed {seed}");
    }
}

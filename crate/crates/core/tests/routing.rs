mod common;

use common::{oracle_route_cost, random_routing_case};
use ridepool::routing::{audit_plan, best_route, route_cost_terms, EXHAUSTIVE_LIMIT};

#[test]
fn best_route_matches_exhaustive_search() {
    let (mut feasible, mut infeasible) = (0, 0);
    for seed in 0..300 {
        let c = random_routing_case(seed, EXHAUSTIVE_LIMIT);
        let got = best_route(&c.net, &c.snap, &c.trip, &c.requests, &c.cons, &c.params, c.rates.as_ref());
        let want = oracle_route_cost(&c);
        match (&got, want) {
            (Some(m), Some(w)) => {
                feasible += 1;
                assert_eq!(m.anticipatory_cost, w, "seed {seed}");
                audit_plan(&c.net, &c.snap, &m.plan, &c.requests, &c.cons).unwrap();
                let terms = route_cost_terms(&c.net, &c.snap, &m.trip, &m.plan, &c.requests, &c.cons).unwrap();
                assert_eq!(terms.price(&c.params), m.base_cost);
            }
            (None, None) => infeasible += 1,
            _ => panic!("seed {seed}: library {:?} oracle {want:?}", got.map(|m| m.anticipatory_cost)),
        }
    }
    assert!(feasible > 100 && infeasible > 5, "{feasible} feasible, {infeasible} infeasible");
}

#[test]
fn heuristic_routes_are_feasible() {
    for seed in 0..60 {
        let c = random_routing_case(1000 + seed, 7);
        if let Some(m) = best_route(&c.net, &c.snap, &c.trip, &c.requests, &c.cons, &c.params, c.rates.as_ref()) {
            audit_plan(&c.net, &c.snap, &m.plan, &c.requests, &c.cons).unwrap();
        }
    }
}


//! Generation and rejection rate estimators.
//!
//! Four estimators are provided: raw counts per node, a travel-time smoothed
//! version of those counts, a per-zone particle filter driven by Poisson
//! likelihoods, and per-zone averages over historical days.

use std::fmt::Write as _;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::demand::DemandTrace;
use crate::error::{Error, Result};
use crate::network::{Node, RoadNetwork, Secs, ZonePartition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateKind {
    Generation,
    Rejection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMethod {
    Basic,
    Smooth,
    ParticleFilter,
    Historical,
}

impl RateMethod {
    pub fn is_zonal(self) -> bool {
        matches!(self, RateMethod::ParticleFilter | RateMethod::Historical)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateField {
    pub kind: RateKind,
    pub method: RateMethod,
    /// One nonnegative value per node.
    pub values: Vec<f64>,
    pub instant: Secs,
}

impl RateField {
    pub fn zeros(n: usize, kind: RateKind, method: RateMethod, instant: Secs) -> Self {
        RateField {
            kind,
            method,
            values: vec![0.0; n],
            instant,
        }
    }

    pub fn get(&self, u: Node) -> f64 {
        self.values[u]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Spreads per-zone values onto every node of the zone.
    pub fn from_zones(
        zones: &ZonePartition,
        zone_values: &[f64],
        kind: RateKind,
        method: RateMethod,
        instant: Secs,
    ) -> Self {
        RateField {
            kind,
            method,
            values: zones.zone_of.iter().map(|&z| zone_values[z]).collect(),
            instant,
        }
    }

    pub fn to_csv(&self, net: &RoadNetwork) -> String {
        let mut s = String::from("node_id,value\n");
        for (u, v) in self.values.iter().enumerate() {
            let _ = writeln!(s, "{},{}", net.external_id(u), v);
        }
        s
    }
}

/// Counts of new request origins and of origins rejected at the previous stage.
///
/// `rejected_prev` is `None` at the first decision instant, where the
/// rejection field is zero everywhere.
pub fn basic_rates(
    n: usize,
    emerged_origins: impl IntoIterator<Item = Node>,
    rejected_prev: Option<&[Node]>,
    instant: Secs,
) -> (RateField, RateField) {
    let mut gen = RateField::zeros(n, RateKind::Generation, RateMethod::Basic, instant);
    for u in emerged_origins {
        gen.values[u] += 1.0;
    }
    let mut rej = RateField::zeros(n, RateKind::Rejection, RateMethod::Basic, instant);
    for &u in rejected_prev.unwrap_or(&[]) {
        rej.values[u] += 1.0;
    }
    (gen, rej)
}

/// `value(u) = sum_w base(w) / (psi + t(u, w))` over every node `w`.
pub fn smooth_rates(net: &RoadNetwork, base: &RateField, psi: f64) -> RateField {
    assert!(psi > 0.0, "smoothing constant must be positive");
    let n = net.node_count();
    let sources: Vec<(Node, f64)> = base
        .values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(w, &v)| (w, v))
        .collect();
    let values = (0..n)
        .map(|u| {
            sources
                .iter()
                .map(|&(w, b)| b / (psi + net.time(u, w) as f64))
                .sum()
        })
        .collect();
    RateField {
        kind: base.kind,
        method: RateMethod::Smooth,
        values,
        instant: base.instant,
    }
}

/// `ln P(X = k)` for `X ~ Poisson(lambda)`.
pub fn log_poisson_pmf(lambda: f64, k: u64) -> f64 {
    let k_f = k as f64;
    let log_fact: f64 = (2..=k).map(|i| (i as f64).ln()).sum();
    if lambda == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -lambda + k_f * lambda.ln() - log_fact
}

pub fn poisson_pmf(lambda: f64, k: u64) -> f64 {
    log_poisson_pmf(lambda, k).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParticleParams {
    /// Particles per zone.
    pub eta: usize,
    /// Variance of the Gaussian perturbation.
    pub sigma2: f64,
    /// Lower clamp for particle values.
    pub epsilon: f64,
}

impl Default for ParticleParams {
    fn default() -> Self {
        ParticleParams {
            eta: 100,
            sigma2: 0.05,
            epsilon: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleFilterState {
    pub params: ParticleParams,
    /// `particles[z][l]`
    pub particles: Vec<Vec<f64>>,
    pub weights: Vec<Vec<f64>>,
}

impl ParticleFilterState {
    /// Particles drawn uniformly on `(0, 2 * mean(first_counts))`, equal weights.
    pub fn init(params: ParticleParams, first_counts: &[u64], rng: &mut impl Rng) -> Self {
        let zones = first_counts.len();
        let mean = if zones == 0 {
            0.0
        } else {
            first_counts.iter().sum::<u64>() as f64 / zones as f64
        };
        let hi = 2.0 * mean;
        let particles = (0..zones)
            .map(|_| {
                (0..params.eta)
                    .map(|_| (rng.random::<f64>() * hi).max(params.epsilon))
                    .collect()
            })
            .collect();
        let w = 1.0 / params.eta as f64;
        ParticleFilterState {
            params,
            particles,
            weights: vec![vec![w; params.eta]; zones],
        }
    }

    /// Weighted mean of each zone's particles.
    pub fn estimates(&self) -> Vec<f64> {
        self.particles
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| p.iter().zip(w).map(|(l, w)| l * w).sum())
            .collect()
    }

    /// One filter step per zone: resample, perturb, reweight by the Poisson
    /// likelihood of the observed count, normalize. Returns per-zone estimates.
    pub fn update(&mut self, counts: &[u64], rng: &mut impl Rng) -> Vec<f64> {
        assert_eq!(counts.len(), self.particles.len(), "one count per zone");
        let eta = self.params.eta;
        let eps = self.params.epsilon;
        let noise = Normal::new(0.0, self.params.sigma2.sqrt()).expect("finite variance");
        for z in 0..counts.len() {
            // multinomial resampling with replacement
            let resampled: Vec<f64> = match WeightedIndex::new(&self.weights[z]) {
                Ok(pick) => (0..eta).map(|_| self.particles[z][pick.sample(rng)]).collect(),
                Err(_) => self.particles[z].clone(),
            };
            let perturbed: Vec<f64> = resampled
                .into_iter()
                .map(|l| (l + noise.sample(rng)).max(eps))
                .collect();
            let logw: Vec<f64> = perturbed
                .iter()
                .map(|&l| log_poisson_pmf(l, counts[z]))
                .collect();
            self.weights[z] = normalize_log_weights(&logw);
            self.particles[z] = perturbed;
        }
        self.estimates()
    }
}

/// Normalized weights from log weights. Falls back to uniform when every
/// weight is zero (or not a number).
pub fn normalize_log_weights(logw: &[f64]) -> Vec<f64> {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return vec![1.0 / logw.len() as f64; logw.len()];
    }
    let raw: Vec<f64> = logw.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return vec![1.0 / logw.len() as f64; logw.len()];
    }
    raw.into_iter().map(|w| w / total).collect()
}

/// Per-zone mean over days of the requests emerging in `(t1, t2]`.
pub fn historical_rates(
    days: &[DemandTrace],
    zones: &ZonePartition,
    t1: Secs,
    t2: Secs,
) -> Result<RateField> {
    if days.is_empty() {
        return Err(Error::Input("historical dataset is empty".into()));
    }
    let mut per_zone = vec![0.0; zones.zone_count()];
    for day in days {
        for r in day.window(t1, t2) {
            per_zone[zones.zone_of[r.origin]] += 1.0;
        }
    }
    for v in &mut per_zone {
        *v /= days.len() as f64;
    }
    Ok(RateField::from_zones(
        zones,
        &per_zone,
        RateKind::Generation,
        RateMethod::Historical,
        t2,
    ))
}

/// Aggregates a node field into per-zone counts.
pub fn zone_counts(zones: &ZonePartition, field: &RateField) -> Vec<u64> {
    let mut out = vec![0u64; zones.zone_count()];
    for (u, &v) in field.values.iter().enumerate() {
        out[zones.zone_of[u]] += v.round() as u64;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateConfig {
    pub method: RateMethod,
    pub kind: RateKind,
    /// Smoothing constant in seconds.
    pub psi: f64,
    #[serde(default)]
    pub particles: ParticleParams,
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig {
            method: RateMethod::Basic,
            kind: RateKind::Generation,
            psi: 1.0,
            particles: ParticleParams::default(),
        }
    }
}

/// Stateful estimator updated once per decision instant.
#[derive(Debug, Clone)]
pub struct RateEstimator {
    pub config: RateConfig,
    zones: Option<ZonePartition>,
    history: Vec<DemandTrace>,
    pf: Option<ParticleFilterState>,
    rng: ChaCha8Rng,
}

/// What the estimator observes at one decision instant.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub instant: Secs,
    pub previous_instant: Secs,
    /// Origins of real requests that emerged since the previous instant.
    pub emerged: &'a [Node],
    /// Origins of real requests rejected at the previous instant; `None` at the first one.
    pub rejected_prev: Option<&'a [Node]>,
}

impl RateEstimator {
    pub fn new(
        config: RateConfig,
        zones: Option<ZonePartition>,
        history: Vec<DemandTrace>,
        seed: u64,
    ) -> Result<Self> {
        if config.method.is_zonal() && zones.is_none() {
            return Err(Error::Config(format!(
                "{:?} rates need a zone partition",
                config.method
            )));
        }
        if config.method == RateMethod::Historical {
            if config.kind == RateKind::Rejection {
                return Err(Error::Config(
                    "historical data only yields generation rates".into(),
                ));
            }
            if history.is_empty() {
                return Err(Error::Config("historical rates need a dataset".into()));
            }
        }
        if !(config.psi > 0.0) {
            return Err(Error::Config("smoothing constant must be positive".into()));
        }
        let p = config.particles;
        if p.eta == 0 || !(p.sigma2 >= 0.0) || !(p.epsilon > 0.0) {
            return Err(Error::Config("invalid particle filter parameters".into()));
        }
        Ok(RateEstimator {
            config,
            zones,
            history,
            pf: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn particle_state(&self) -> Option<&ParticleFilterState> {
        self.pf.as_ref()
    }

    pub fn update(&mut self, net: &RoadNetwork, obs: Observation<'_>) -> Result<RateField> {
        let n = net.node_count();
        let (gen, rej) = basic_rates(n, obs.emerged.iter().copied(), obs.rejected_prev, obs.instant);
        let base = match self.config.kind {
            RateKind::Generation => gen,
            RateKind::Rejection => rej,
        };
        Ok(match self.config.method {
            RateMethod::Basic => base,
            RateMethod::Smooth => smooth_rates(net, &base, self.config.psi),
            RateMethod::ParticleFilter => {
                let zones = self.zones.as_ref().expect("checked at construction");
                let counts = zone_counts(zones, &base);
                let pf = self.pf.get_or_insert_with(|| {
                    ParticleFilterState::init(self.config.particles, &counts, &mut self.rng)
                });
                let est = pf.update(&counts, &mut self.rng);
                RateField::from_zones(zones, &est, base.kind, RateMethod::ParticleFilter, obs.instant)
            }
            RateMethod::Historical => {
                let zones = self.zones.as_ref().expect("checked at construction");
                historical_rates(&self.history, zones, obs.previous_instant, obs.instant)?
            }
        })
    }
}

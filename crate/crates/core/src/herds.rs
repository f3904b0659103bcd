//! Exact event-driven simulation of the herds process.
//!
//! Each particle dies at rate 1, each boundary pair `(x, y)` of a herd
//! fires a birth at `y` with rate `lambda`, and each active edge splits its
//! herd with rate `v`. Per-herd weights live in Fenwick trees so that
//! selecting the affected herd costs O(log #herds).

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seeding::par_replicas;
use crate::stats::{wilson_interval, Estimate, MeanAcc};
use crate::sum_tree::SumTree;
use crate::tree_shapes::{CanonicalShapeCode, HerdShape, TreeEdge, TreeVertex};

/// Herds whose addresses grow deeper than this are moved back near the root.
const RECENTER_DEPTH: usize = 14;
const CONSISTENCY_PERIOD: u64 = 1 << 20;
pub const DEFAULT_EVENT_CAP: u64 = 100_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HerdsParams {
    pub lambda: f64,
    pub v: f64,
    pub d: u32,
}

impl HerdsParams {
    /// Validated constructor. `lambda = 0` and `v = 0` are accepted as
    /// degenerate boundary cases (pure death, no splitting).
    pub fn new(lambda: f64, v: f64, d: u32) -> Result<Self> {
        let p = Self { lambda, v, d };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(invalid("lambda", format!("must be finite and >= 0, got {}", self.lambda)));
        }
        if !self.v.is_finite() || self.v < 0.0 {
            return Err(invalid("v", format!("must be finite and >= 0, got {}", self.v)));
        }
        if self.d < 3 {
            return Err(invalid("d", format!("must be at least 3, got {}", self.d)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRates {
    pub death: f64,
    pub birth: f64,
    pub split: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Death,
    Birth,
    Split,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventDetail {
    Particle(TreeVertex),
    Pair(TreeVertex, TreeVertex),
    Edge(TreeEdge),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HerdsEvent {
    pub kind: EventKind,
    pub herd: usize,
    pub detail: EventDetail,
    pub time: f64,
}

/// A finite multiset of herds. Multiplicity is carried by repeated entries.
#[derive(Debug, Clone)]
pub struct HerdConfig {
    d: u32,
    herds: Vec<HerdShape>,
    particles: SumTree,
    boundary: SumTree,
    edges: SumTree,
}

impl HerdConfig {
    pub fn empty(d: u32) -> Self {
        Self {
            d,
            herds: Vec::new(),
            particles: SumTree::new(),
            boundary: SumTree::new(),
            edges: SumTree::new(),
        }
    }

    /// `delta_{o}`: one herd holding a single particle.
    pub fn singleton(d: u32) -> Self {
        Self::from_shapes(d, vec![HerdShape::singleton(d)])
    }

    pub fn from_shapes(d: u32, shapes: Vec<HerdShape>) -> Self {
        let mut c = Self::empty(d);
        for s in shapes {
            c.push(s);
        }
        c
    }

    pub fn degree(&self) -> u32 {
        self.d
    }

    pub fn push(&mut self, shape: HerdShape) {
        assert_eq!(shape.degree(), self.d, "herd degree mismatch");
        self.particles.push(shape.particle_count() as u64);
        self.boundary.push(shape.boundary_pair_count());
        self.edges.push(shape.active_edge_count() as u64);
        self.herds.push(shape);
    }

    fn replace(&mut self, i: usize, shape: HerdShape) {
        self.particles.set(i, shape.particle_count() as u64);
        self.boundary.set(i, shape.boundary_pair_count());
        self.edges.set(i, shape.active_edge_count() as u64);
        self.herds[i] = shape;
    }

    fn remove(&mut self, i: usize) {
        self.particles.swap_remove(i);
        self.boundary.swap_remove(i);
        self.edges.swap_remove(i);
        self.herds.swap_remove(i);
    }

    pub fn herds(&self) -> &[HerdShape] {
        &self.herds
    }

    pub fn herd_count(&self) -> usize {
        self.herds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.herds.is_empty()
    }

    /// Total number of particles, `X`.
    pub fn particle_count(&self) -> u64 {
        self.particles.total()
    }

    /// Total number of active edges.
    pub fn active_edge_count(&self) -> u64 {
        self.edges.total()
    }

    pub fn boundary_pair_count(&self) -> u64 {
        self.boundary.total()
    }

    pub fn rates(&self, p: &HerdsParams) -> EventRates {
        let death = self.particle_count() as f64;
        let birth = p.lambda * self.boundary_pair_count() as f64;
        let split = p.v * self.active_edge_count() as f64;
        EventRates {
            death,
            birth,
            split,
            total: death + birth + split,
        }
    }

    /// Sorted canonical codes of all herds: the state modulo automorphisms.
    pub fn canonical_multiset(&self) -> Vec<CanonicalShapeCode> {
        let mut codes: Vec<_> = self.herds.iter().map(HerdShape::canonical_code).collect();
        codes.sort_unstable();
        codes
    }

    /// Recomputes every aggregate from the shapes and compares.
    pub fn check_consistency(&self) -> Result<()> {
        let mut x = 0u64;
        let mut b = 0u64;
        let mut e = 0u64;
        for (i, h) in self.herds.iter().enumerate() {
            let fresh = HerdShape::new(self.d, h.particles().to_vec())?;
            let ok = self.particles.get(i) == fresh.particle_count() as u64
                && self.boundary.get(i) == fresh.boundary_pair_count()
                && self.edges.get(i) == fresh.active_edge_count() as u64;
            if !ok {
                return Err(Error::RateInconsistency(format!("stale weights for herd {i}")));
            }
            x += fresh.particle_count() as u64;
            b += fresh.boundary_pair_count();
            e += fresh.active_edge_count() as u64;
        }
        if (x, b, e) != (self.particle_count(), self.boundary_pair_count(), self.active_edge_count()) {
            return Err(Error::RateInconsistency("aggregate totals drifted".into()));
        }
        Ok(())
    }

    /// Draws a holding time and an event and applies it. Returns `None`
    /// when the configuration is absorbed (total rate zero).
    pub fn step<R: Rng + ?Sized>(&mut self, p: &HerdsParams, now: f64, rng: &mut R) -> Option<HerdsEvent> {
        let rates = self.rates(p);
        if rates.total <= 0.0 {
            return None;
        }
        let e: f64 = rng.sample(Exp1);
        let time = now + e / rates.total;
        let (kind, herd, detail) = self.apply_random(p, &rates, rng);
        Some(HerdsEvent {
            kind,
            herd,
            detail,
            time,
        })
    }

    fn apply_random<R: Rng + ?Sized>(
        &mut self,
        p: &HerdsParams,
        rates: &EventRates,
        rng: &mut R,
    ) -> (EventKind, usize, EventDetail) {
        let r = rng.random::<f64>() * rates.total;
        let (kind, k) = if r < rates.death {
            (EventKind::Death, r as u64)
        } else if r < rates.death + rates.birth {
            (EventKind::Birth, ((r - rates.death) / p.lambda) as u64)
        } else {
            (EventKind::Split, ((r - rates.death - rates.birth) / p.v) as u64)
        };
        let (herd, detail) = self.apply_indexed(kind, k, rng);
        (kind, herd, detail)
    }

    /// Applies an event of kind `kind`, chosen uniformly among all events of
    /// that kind. Panics if there is none.
    pub fn apply_kind<R: Rng + ?Sized>(&mut self, kind: EventKind, rng: &mut R) -> (usize, EventDetail) {
        let n = match kind {
            EventKind::Death => self.particle_count(),
            EventKind::Birth => self.boundary_pair_count(),
            EventKind::Split => self.active_edge_count(),
        };
        assert!(n > 0, "no {kind:?} event available");
        let k = rng.random_range(0..n);
        self.apply_indexed(kind, k, rng)
    }

    /// `k` indexes particles, boundary pairs or active edges in herd order.
    fn apply_indexed<R: Rng + ?Sized>(&mut self, kind: EventKind, k: u64, rng: &mut R) -> (usize, EventDetail) {
        match kind {
            EventKind::Death => {
                let k = k.min(self.particle_count() - 1);
                let i = self.particles.find(k);
                let x = self.herds[i].particles()[(k - self.particles.prefix(i)) as usize].clone();
                self.kill(i, &x);
                (i, EventDetail::Particle(x))
            }
            EventKind::Birth => {
                let k = k.min(self.boundary_pair_count() - 1);
                let i = self.boundary.find(k);
                let (x, y) = self.herds[i].sample_boundary_pair(rng);
                self.give_birth(i, y.clone());
                (i, EventDetail::Pair(x, y))
            }
            EventKind::Split => {
                let (i, edge) = self.indexed_edge(k);
                self.split(i, &edge).expect("edge drawn from the active set");
                (i, EventDetail::Edge(edge))
            }
        }
    }

    fn indexed_edge(&self, k: u64) -> (usize, TreeEdge) {
        let k = k.min(self.active_edge_count() - 1);
        let i = self.edges.find(k);
        let offset = (k - self.edges.prefix(i)) as usize;
        let child = self.herds[i].steiner_vertices()[offset + 1].clone();
        (i, TreeEdge::above(child).expect("non-top steiner vertex"))
    }

    /// Uniform active edge over all herds, with the index of its herd.
    pub fn sample_active_edge<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(usize, TreeEdge)> {
        let n = self.active_edge_count();
        (n > 0).then(|| self.indexed_edge(rng.random_range(0..n)))
    }

    /// Uniform boundary pair `(x, y)` over all herds, with the index of its herd.
    pub fn sample_boundary_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<(usize, TreeVertex, TreeVertex)> {
        let n = self.boundary_pair_count();
        if n == 0 {
            return None;
        }
        let i = self.boundary.find(rng.random_range(0..n));
        let (x, y) = self.herds[i].sample_boundary_pair(rng);
        Some((i, x, y))
    }

    fn kill(&mut self, i: usize, x: &TreeVertex) {
        match self.herds[i].without(x) {
            Some(rest) => self.replace(i, rest),
            None => self.remove(i),
        }
    }

    fn give_birth(&mut self, i: usize, y: TreeVertex) {
        let mut grown = self.herds[i].with(y);
        if grown.max_depth() > RECENTER_DEPTH {
            grown = grown.recentered();
        }
        self.replace(i, grown);
    }

    fn split(&mut self, i: usize, e: &TreeEdge) -> Result<()> {
        let (a, b) = self.herds[i].split(e)?;
        self.replace(i, a);
        self.push(b);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOptions {
    pub event_cap: u64,
    /// Stop once the particle count exceeds this value.
    pub particle_cap: Option<u64>,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            event_cap: DEFAULT_EVENT_CAP,
            particle_cap: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Horizon,
    Extinct,
    EventCap,
    ParticleCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub t: f64,
    pub x: u64,
    pub edges: u64,
    pub births: u64,
    pub herds: u64,
}

impl Observation {
    pub fn alive(&self) -> bool {
        self.x > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub seed: u64,
    pub replica: u64,
    /// One entry per requested sample time that was reached.
    pub samples: Vec<Observation>,
    pub extinction_time: Option<f64>,
    pub stop: StopReason,
    pub stopped_at: f64,
    pub events: u64,
    pub births: u64,
    pub max_particles: u64,
}

impl TrajectorySample {
    /// True if every requested sample was recorded.
    pub fn complete(&self, requested: usize) -> bool {
        self.samples.len() == requested
    }
}

/// A running simulation: configuration plus clock and counters.
#[derive(Debug, Clone)]
pub struct HerdsRun {
    pub config: HerdConfig,
    pub params: HerdsParams,
    pub time: f64,
    pub births: u64,
    pub events: u64,
    pub max_particles: u64,
    pub extinction_time: Option<f64>,
}

impl HerdsRun {
    pub fn new(config: HerdConfig, params: HerdsParams) -> Self {
        let x = config.particle_count();
        let extinction_time = if config.is_empty() { Some(0.0) } else { None };
        Self {
            config,
            params,
            time: 0.0,
            births: 0,
            events: 0,
            max_particles: x,
            extinction_time,
        }
    }

    /// Advances to `until`. Any event that would overshoot is discarded,
    /// which is lawful by memorylessness of the holding times.
    pub fn advance<R: Rng + ?Sized>(&mut self, until: f64, options: &SimOptions, rng: &mut R) -> StopReason {
        loop {
            if self.config.is_empty() {
                return StopReason::Extinct;
            }
            if self.events >= options.event_cap {
                return StopReason::EventCap;
            }
            if options.particle_cap.is_some_and(|c| self.config.particle_count() > c) {
                return StopReason::ParticleCap;
            }
            let rates = self.config.rates(&self.params);
            let e: f64 = rng.sample(Exp1);
            let next = self.time + e / rates.total;
            if next > until {
                self.time = until;
                return StopReason::Horizon;
            }
            self.time = next;
            let (kind, _, _) = self.config.apply_random(&self.params, &rates, rng);
            self.events += 1;
            match kind {
                EventKind::Birth => {
                    self.births += 1;
                    self.max_particles = self.max_particles.max(self.config.particle_count());
                }
                EventKind::Death if self.config.is_empty() => self.extinction_time = Some(self.time),
                _ => {}
            }
            if self.events.is_multiple_of(CONSISTENCY_PERIOD) {
                self.config
                    .check_consistency()
                    .expect("incremental aggregates match recomputation");
            }
        }
    }

    pub fn observe(&self) -> Observation {
        Observation {
            t: self.time,
            x: self.config.particle_count(),
            edges: self.config.active_edge_count(),
            births: self.births,
            herds: self.config.herd_count() as u64,
        }
    }
}

/// Simulates to `horizon`, recording the state at each of `sample_times`
/// (sorted, at most `horizon`).
pub fn simulate<R: Rng + ?Sized>(
    initial: &HerdConfig,
    params: &HerdsParams,
    horizon: f64,
    sample_times: &[f64],
    options: &SimOptions,
    rng: &mut R,
) -> TrajectorySample {
    debug_assert!(sample_times.windows(2).all(|w| w[0] <= w[1]));
    let mut run = HerdsRun::new(initial.clone(), *params);
    let mut samples = Vec::with_capacity(sample_times.len());
    let mut stop = StopReason::Horizon;
    for &t in sample_times.iter().filter(|&&t| t <= horizon) {
        stop = run.advance(t, options, rng);
        match stop {
            StopReason::Horizon => samples.push(run.observe()),
            StopReason::Extinct => {
                let mut o = run.observe();
                o.t = t;
                samples.push(o);
            }
            StopReason::EventCap | StopReason::ParticleCap => break,
        }
    }
    if matches!(stop, StopReason::Horizon | StopReason::Extinct) {
        stop = run.advance(horizon, options, rng);
    }
    TrajectorySample {
        seed: 0,
        replica: 0,
        samples,
        extinction_time: run.extinction_time,
        stop,
        stopped_at: run.time,
        events: run.events,
        births: run.births,
        max_particles: run.max_particles,
    }
}

/// Independent replicas of [`simulate`], replica `r` seeded by `(seed, r)`.
pub fn simulate_replicas(
    initial: &HerdConfig,
    params: &HerdsParams,
    horizon: f64,
    sample_times: &[f64],
    options: &SimOptions,
    reps: u64,
    seed: u64,
) -> Vec<TrajectorySample> {
    par_replicas(seed, reps, |r, rng| {
        let mut s = simulate(initial, params, horizon, sample_times, options, rng);
        s.seed = seed;
        s.replica = r;
        s
    })
}

/// Monte Carlo mean of `X_t^p` with its standard error.
pub fn sample_moment(
    params: &HerdsParams,
    initial: &HerdConfig,
    t: f64,
    p: u32,
    reps: u64,
    seed: u64,
) -> Estimate {
    if t == 0.0 {
        return Estimate::exact((initial.particle_count() as f64).powi(p as i32));
    }
    let runs = simulate_replicas(initial, params, t, &[t], &SimOptions::default(), reps, seed);
    runs.iter()
        .map(|s| (s.samples[0].x as f64).powi(p as i32))
        .collect::<MeanAcc>()
        .estimate()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalEstimate {
    pub survivors: u64,
    pub reps: u64,
    pub fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Replicas stopped at the particle cap; they count as survivors.
    pub capped: u64,
}

/// Fraction of replicas alive at time `t`.
pub fn survival_probe(
    params: &HerdsParams,
    initial: &HerdConfig,
    t: f64,
    reps: u64,
    seed: u64,
    options: &SimOptions,
) -> SurvivalEstimate {
    let runs = simulate_replicas(initial, params, t, &[], options, reps, seed);
    let capped = runs
        .iter()
        .filter(|s| matches!(s.stop, StopReason::ParticleCap | StopReason::EventCap))
        .count() as u64;
    let survivors = runs.iter().filter(|s| s.stop != StopReason::Extinct).count() as u64;
    let (ci_low, ci_high) = wilson_interval(survivors, reps, 1.96);
    SurvivalEstimate {
        survivors,
        reps,
        fraction: survivors as f64 / reps as f64,
        ci_low,
        ci_high,
        capped,
    }
}

/// Outcome of a run coupled with its dominating pure-birth chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PureBirthRun {
    /// Births of the herds process up to the horizon.
    pub births: u64,
    /// `Z_T - Z_0`.
    pub z_increase: u64,
    /// Events after which `N_t > Z_t - Z_0` held.
    pub violations: u64,
}

/// Runs the herds process jointly with the pure-birth chain `Z` jumping
/// `i -> i + 1` at rate `d * lambda * i`, `Z_0 = X_0`. Every birth of the
/// herds process is a thinned birth of `Z`.
pub fn simulate_with_pure_birth<R: Rng + ?Sized>(
    initial: &HerdConfig,
    params: &HerdsParams,
    horizon: f64,
    rng: &mut R,
) -> PureBirthRun {
    let mut config = initial.clone();
    let z0 = config.particle_count();
    let mut z = z0;
    let mut births = 0u64;
    let mut violations = 0u64;
    let mut time = 0.0;
    let d = f64::from(params.d);
    loop {
        let death = config.particle_count() as f64;
        let split = params.v * config.active_edge_count() as f64;
        let zbirth = d * params.lambda * z as f64;
        let total = death + split + zbirth;
        if total <= 0.0 {
            break;
        }
        let e: f64 = rng.sample(Exp1);
        time += e / total;
        if time > horizon {
            break;
        }
        let r = rng.random::<f64>() * total;
        if r < zbirth {
            let accept = params.lambda * config.boundary_pair_count() as f64 / zbirth;
            assert!(accept <= 1.0 + 1e-12, "herds birth rate exceeds the dominating rate");
            z += 1;
            if rng.random::<f64>() < accept {
                let k = rng.random_range(0..config.boundary_pair_count());
                let i = config.boundary.find(k);
                let (_, y) = config.herds[i].sample_boundary_pair(rng);
                config.give_birth(i, y);
                births += 1;
            }
        } else {
            // Death or split, exactly as in the plain engine with birth off.
            let rates = EventRates {
                death,
                birth: 0.0,
                split,
                total: death + split,
            };
            let no_birth = HerdsParams { lambda: 0.0, ..*params };
            config.apply_random(&no_birth, &rates, rng);
        }
        if births > z - z0 {
            violations += 1;
        }
    }
    PureBirthRun {
        births,
        z_increase: z - z0,
        violations,
    }
}

/// A herd of the inner configuration nested inside a herd of the outer one,
/// sharing its embedding. `inner` may be empty.
#[derive(Debug, Clone)]
pub struct NestedHerd {
    pub outer: HerdShape,
    pub inner: Vec<TreeVertex>,
}

/// Two configurations `xi <= xi'` run under the attractive coupling: the
/// `i`-th inner herd is a subset of the `i`-th outer herd at all times.
#[derive(Debug, Clone)]
pub struct MonotonePair {
    pub d: u32,
    pub herds: Vec<NestedHerd>,
}

impl MonotonePair {
    pub fn new(d: u32, herds: Vec<NestedHerd>) -> Result<Self> {
        for h in &herds {
            if !h.inner.iter().all(|x| h.outer.contains(x)) {
                return Err(invalid("inner", "inner herd must be contained in its outer herd"));
            }
        }
        let mut herds = herds;
        for h in &mut herds {
            h.inner.sort_unstable();
            h.inner.dedup();
        }
        Ok(Self { d, herds })
    }

    pub fn inner_config(&self) -> HerdConfig {
        HerdConfig::from_shapes(
            self.d,
            self.herds
                .iter()
                .filter(|h| !h.inner.is_empty())
                .map(|h| HerdShape::new(self.d, h.inner.clone()).expect("valid inner herd"))
                .collect(),
        )
    }

    pub fn outer_config(&self) -> HerdConfig {
        HerdConfig::from_shapes(self.d, self.herds.iter().map(|h| h.outer.clone()).collect())
    }

    /// Whether every inner herd sits inside its outer herd.
    pub fn is_ordered(&self) -> bool {
        self.herds
            .iter()
            .all(|h| h.inner.iter().all(|x| h.outer.contains(x)))
    }

    fn inner_only_pairs(&self, h: &NestedHerd) -> Vec<(TreeVertex, TreeVertex)> {
        let mut out = Vec::new();
        for x in &h.inner {
            for y in x.neighbors(self.d) {
                if h.outer.contains(&y) && h.inner.binary_search(&y).is_err() {
                    out.push((x.clone(), y));
                }
            }
        }
        out
    }

    /// One coupled event, provided it happens within `budget` time units.
    /// Returns the holding time, or `None` (state untouched) if the pair is
    /// empty or the next event would come later than `budget`.
    pub fn step<R: Rng + ?Sized>(&mut self, p: &HerdsParams, budget: f64, rng: &mut R) -> Option<f64> {
        // Per herd: outer deaths, outer births, inner-only births, splits.
        let weights: Vec<[f64; 4]> = self
            .herds
            .iter()
            .map(|h| {
                [
                    h.outer.particle_count() as f64,
                    p.lambda * h.outer.boundary_pair_count() as f64,
                    p.lambda * self.inner_only_pairs(h).len() as f64,
                    p.v * h.outer.active_edge_count() as f64,
                ]
            })
            .collect();
        let total: f64 = weights.iter().flatten().sum();
        if total <= 0.0 {
            return None;
        }
        let dt = rng.sample::<f64, _>(Exp1) / total;
        if dt > budget {
            return None;
        }
        let mut r = rng.random::<f64>() * total;
        let (mut i, mut kind) = (weights.len() - 1, 3);
        'outer: for (hi, w) in weights.iter().enumerate() {
            for (k, &wk) in w.iter().enumerate() {
                if r < wk {
                    i = hi;
                    kind = k;
                    break 'outer;
                }
                r -= wk;
            }
        }
        let h = &mut self.herds[i];
        match kind {
            0 => {
                let x = h.outer.sample_particle(rng).clone();
                h.inner.retain(|y| *y != x);
                match h.outer.without(&x) {
                    Some(rest) => h.outer = rest,
                    None => {
                        self.herds.swap_remove(i);
                    }
                }
            }
            1 => {
                let (x, y) = h.outer.sample_boundary_pair(rng);
                if h.inner.binary_search(&x).is_ok() {
                    // y lies outside the outer herd, hence outside the inner one.
                    let at = h.inner.binary_search(&y).expect_err("y is vacant");
                    h.inner.insert(at, y.clone());
                }
                h.outer = h.outer.with(y);
            }
            2 => {
                let pairs = self.inner_only_pairs(&self.herds[i]);
                let (_, y) = pairs[rng.random_range(0..pairs.len())].clone();
                let h = &mut self.herds[i];
                let at = h.inner.binary_search(&y).expect_err("target is outside the inner herd");
                h.inner.insert(at, y);
            }
            _ => {
                let edge = h.outer.sample_active_edge(rng).expect("split weight is positive");
                let (near, far) = h.outer.split_in_place(&edge).expect("active edge");
                let (far_inner, near_inner): (Vec<_>, Vec<_>) =
                    h.inner.iter().cloned().partition(|x| x.is_descendant_of(edge.child()));
                *h = NestedHerd {
                    outer: near,
                    inner: near_inner,
                };
                self.herds.push(NestedHerd {
                    outer: far,
                    inner: far_inner,
                });
            }
        }
        Some(dt)
    }

    /// Runs until time `horizon` has elapsed or both sides are empty.
    pub fn run_for<R: Rng + ?Sized>(&mut self, p: &HerdsParams, horizon: f64, rng: &mut R) {
        let mut t = 0.0;
        while let Some(dt) = self.step(p, horizon - t, rng) {
            t += dt;
        }
    }
}

/// Replica-level summary row for CSV output.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicaRow {
    pub seed: u64,
    pub replica: u64,
    pub lambda: f64,
    pub v: f64,
    pub d: u32,
    pub t: f64,
    pub x: u64,
    pub active_edges: u64,
    pub births: u64,
    pub herds: u64,
    pub extinct_by: Option<f64>,
    pub stop: StopReason,
}

pub fn replica_rows(params: &HerdsParams, runs: &[TrajectorySample]) -> Vec<ReplicaRow> {
    runs.iter()
        .flat_map(|s| {
            s.samples.iter().map(move |o| ReplicaRow {
                seed: s.seed,
                replica: s.replica,
                lambda: params.lambda,
                v: params.v,
                d: params.d,
                t: o.t,
                x: o.x,
                active_edges: o.edges,
                births: o.births,
                herds: o.herds,
                extinct_by: s.extinction_time.filter(|&te| te <= o.t),
                stop: s.stop,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::replica_rng;

    fn pair() -> HerdShape {
        HerdShape::new(3, vec![TreeVertex::root(), TreeVertex::from_labels(&[0])]).unwrap()
    }

    #[test]
    fn rate_examples() {
        let p = HerdsParams::new(0.5, 2.0, 3).unwrap();
        let r = HerdConfig::singleton(3).rates(&p);
        assert_eq!((r.death, r.birth, r.split, r.total), (1.0, 1.5, 0.0, 2.5));
        let r = HerdConfig::from_shapes(3, vec![pair()]).rates(&p);
        assert_eq!((r.death, r.birth, r.split, r.total), (2.0, 2.0, 2.0, 6.0));
        let twice = HerdConfig::from_shapes(3, vec![pair(), pair()]).rates(&p);
        assert_eq!(twice.total, 2.0 * r.total);
        assert_eq!(twice.birth, 2.0 * r.birth);
    }

    #[test]
    fn parameter_validation_names_the_field() {
        let err = HerdsParams::new(-1.0, 1.0, 3).unwrap_err();
        assert!(err.to_string().contains("lambda"));
        assert!(HerdsParams::new(0.5, f64::NAN, 3).unwrap_err().to_string().contains("`v`"));
        assert!(HerdsParams::new(0.5, 1.0, 2).unwrap_err().to_string().contains("`d`"));
        assert!(HerdsParams::new(0.0, 0.0, 3).is_ok());
    }

    #[test]
    fn pure_death_step_empties_config() {
        let p = HerdsParams::new(0.0, 1.0, 3).unwrap();
        let mut c = HerdConfig::singleton(3);
        let ev = c.step(&p, 0.0, &mut replica_rng(1, 0)).unwrap();
        assert_eq!(ev.kind, EventKind::Death);
        assert!(c.is_empty());
        assert!(c.step(&p, ev.time, &mut replica_rng(1, 0)).is_none());
    }

    #[test]
    fn split_of_adjacent_pair() {
        let p = HerdsParams::new(0.0, 1.0, 3).unwrap();
        let mut rng = replica_rng(2, 0);
        loop {
            let mut c = HerdConfig::from_shapes(3, vec![pair()]);
            let ev = c.step(&p, 0.0, &mut rng).unwrap();
            if ev.kind == EventKind::Split {
                assert_eq!(c.herd_count(), 2);
                assert_eq!(c.particle_count(), 2);
                assert_eq!(c.active_edge_count(), 0);
                c.check_consistency().unwrap();
                break;
            }
        }
    }

    #[test]
    fn aggregates_survive_long_runs() {
        let p = HerdsParams::new(0.6, 0.7, 3).unwrap();
        let mut run = HerdsRun::new(HerdConfig::singleton(3), p);
        let mut rng = replica_rng(11, 0);
        let options = SimOptions {
            event_cap: 20_000,
            particle_cap: None,
        };
        while run.events < 20_000 && !run.config.is_empty() {
            let t = run.time + 1.0;
            run.advance(t, &options, &mut rng);
            run.config.check_consistency().unwrap();
        }
    }

    #[test]
    fn horizon_zero_records_initial_state() {
        let p = HerdsParams::new(0.5, 1.0, 3).unwrap();
        let init = HerdConfig::from_shapes(3, vec![pair()]);
        let s = simulate(&init, &p, 0.0, &[0.0], &SimOptions::default(), &mut replica_rng(0, 0));
        assert_eq!(s.samples.len(), 1);
        assert_eq!(s.samples[0].x, 2);
        assert_eq!(s.events, 0);
    }

    #[test]
    fn simulation_is_deterministic_given_seed() {
        let p = HerdsParams::new(0.45, 1.0, 3).unwrap();
        let times = [1.0, 2.0, 3.0];
        let a = simulate_replicas(&HerdConfig::singleton(3), &p, 3.0, &times, &SimOptions::default(), 50, 9);
        let b = simulate_replicas(&HerdConfig::singleton(3), &p, 3.0, &times, &SimOptions::default(), 50, 9);
        assert_eq!(a, b);
        for s in &a {
            assert!(s.samples.windows(2).all(|w| w[0].births <= w[1].births));
            if let Some(te) = s.extinction_time {
                assert!(s.samples.iter().filter(|o| o.t >= te).all(|o| o.x == 0));
            }
        }
    }

    #[test]
    fn event_cap_is_reported() {
        let p = HerdsParams::new(2.0, 0.1, 3).unwrap();
        let options = SimOptions {
            event_cap: 100,
            particle_cap: None,
        };
        let s = (0..)
            .map(|r| simulate(&HerdConfig::singleton(3), &p, 1e6, &[1e6], &options, &mut replica_rng(1, r)))
            .find(|s| s.stop != StopReason::Extinct)
            .unwrap();
        assert_eq!(s.stop, StopReason::EventCap);
        assert_eq!(s.events, 100);
        assert!(s.samples.is_empty());
    }

    #[test]
    fn monotone_pair_rejects_unordered_input() {
        let bad = NestedHerd {
            outer: HerdShape::singleton(3),
            inner: vec![TreeVertex::from_labels(&[1])],
        };
        assert!(MonotonePair::new(3, vec![bad]).is_err());
    }
}

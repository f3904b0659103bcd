//! Contact process on the dynamic random regular graph.
//!
//! The fast engine draws competing exponentials among the switch clock, one
//! recovery clock per infected vertex and one transmission clock per
//! half-edge of an infected vertex. Marks at healthy vertices are never
//! generated since they cannot change anything.
//!
//! [`GraphicalRun`] keeps every clock explicitly, each on its own random
//! stream, so that different initial sets and different thinning rules can be
//! compared on one realization.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::graph::{check_half_edges, switch_clock_rate, HalfEdge, HalfEdgeMatching, SwitchCode};
use crate::seeding::{derive_seed, par_replicas, replica_rng, SimRng};
use crate::stats::{Estimate, MeanAcc};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactParams {
    pub n: u32,
    pub d: u32,
    pub lambda: f64,
    pub v: f64,
}

impl ContactParams {
    pub fn new(n: u32, d: u32, lambda: f64, v: f64) -> Result<Self> {
        let p = Self { n, d, lambda, v };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_half_edges(self.n, self.d)?;
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(invalid("lambda", "must be finite and nonnegative"));
        }
        if !(self.v.is_finite() && self.v >= 0.0) {
            return Err(invalid("v", "must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn switch_rate(&self) -> f64 {
        switch_clock_rate(self.n, self.d, self.v).expect("validated")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContactStop {
    Horizon,
    Extinct,
    EventCap,
}

const HEALTHY: u32 = u32::MAX;

/// Joint state of the graph and the infected set.
#[derive(Debug, Clone)]
pub struct ContactRun {
    params: ContactParams,
    graph: HalfEdgeMatching,
    infected: Vec<u32>,
    position: Vec<u32>,
    switch_rate: f64,
    pub time: f64,
    pub events: u64,
    pub extinction_time: Option<f64>,
}

impl ContactRun {
    pub fn new(params: &ContactParams, graph: HalfEdgeMatching, initial: &[u32]) -> Result<Self> {
        params.validate()?;
        if graph.n() != params.n || graph.d() != params.d {
            return Err(invalid("graph", "size does not match n and d"));
        }
        let mut run = Self {
            params: *params,
            graph,
            infected: Vec::with_capacity(params.n as usize),
            position: vec![HEALTHY; params.n as usize],
            switch_rate: params.switch_rate(),
            time: 0.0,
            events: 0,
            extinction_time: None,
        };
        for &u in initial {
            if u >= params.n {
                return Err(invalid("initial", format!("vertex {} outside 1..={}", u + 1, params.n)));
            }
            run.infect(u);
        }
        if run.infected.is_empty() {
            run.extinction_time = Some(0.0);
        }
        Ok(run)
    }

    pub fn graph(&self) -> &HalfEdgeMatching {
        &self.graph
    }

    pub fn infected_count(&self) -> usize {
        self.infected.len()
    }

    pub fn is_infected(&self, u: u32) -> bool {
        self.position[u as usize] != HEALTHY
    }

    /// Infected vertices in increasing order.
    pub fn infected(&self) -> Vec<u32> {
        let mut v = self.infected.clone();
        v.sort_unstable();
        v
    }

    #[inline]
    fn infect(&mut self, u: u32) {
        if self.position[u as usize] == HEALTHY {
            self.position[u as usize] = self.infected.len() as u32;
            self.infected.push(u);
        }
    }

    #[inline]
    fn recover_at(&mut self, idx: usize) {
        let u = self.infected.swap_remove(idx);
        self.position[u as usize] = HEALTHY;
        if let Some(&moved) = self.infected.get(idx) {
            self.position[moved as usize] = idx as u32;
        }
    }

    /// Runs until `until`, extinction, or `event_cap` total events. The
    /// event that would cross `until` is discarded.
    pub fn advance<R: Rng + ?Sized>(&mut self, until: f64, event_cap: u64, rng: &mut R) -> ContactStop {
        let d = self.params.d;
        let lambda = self.params.lambda;
        let per_vertex = 1.0 + lambda * f64::from(d);
        loop {
            let k = self.infected.len();
            if k == 0 {
                return ContactStop::Extinct;
            }
            if self.events >= event_cap {
                return ContactStop::EventCap;
            }
            let rate = self.switch_rate + k as f64 * per_vertex;
            let dt = rng.sample::<f64, _>(Exp1) / rate;
            if self.time + dt > until {
                self.time = until;
                return ContactStop::Horizon;
            }
            self.time += dt;
            self.events += 1;
            let x = rng.random::<f64>() * rate - self.switch_rate;
            if x < 0.0 {
                self.graph.random_switch(rng);
            } else if x < k as f64 {
                self.recover_at((x as usize).min(k - 1));
                if self.infected.is_empty() {
                    self.extinction_time = Some(self.time);
                }
            } else {
                let h = (((x - k as f64) / lambda) as usize).min(k * d as usize - 1);
                let u = self.infected[h / d as usize];
                let target = self.graph.neighbor(u, (h % d as usize) as u32);
                self.infect(target);
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ContactTrajectory {
    /// `(t, |infected|)` at each requested sample time.
    pub samples: Vec<(f64, usize)>,
    pub extinction_time: Option<f64>,
    pub stop: ContactStop,
    pub stopped_at: f64,
    pub events: u64,
    pub final_infected: Vec<u32>,
}

/// Runs one trajectory from `initial` on a fresh uniform graph.
pub fn simulate_contact<R: Rng + ?Sized>(
    params: &ContactParams,
    initial: &[u32],
    horizon: f64,
    sample_times: &[f64],
    event_cap: u64,
    rng: &mut R,
) -> Result<ContactTrajectory> {
    let graph = HalfEdgeMatching::sample_uniform(params.n, params.d, rng)?;
    let mut run = ContactRun::new(params, graph, initial)?;
    let mut samples = Vec::with_capacity(sample_times.len());
    let mut stop = ContactStop::Horizon;
    for &t in sample_times.iter().filter(|&&t| t <= horizon) {
        stop = run.advance(t, event_cap, rng);
        if stop == ContactStop::EventCap {
            break;
        }
        samples.push((t, run.infected_count()));
    }
    if stop != ContactStop::EventCap {
        stop = run.advance(horizon, event_cap, rng);
    }
    Ok(ContactTrajectory {
        samples,
        extinction_time: run.extinction_time,
        stop,
        stopped_at: run.time,
        events: run.events,
        final_infected: run.infected(),
    })
}

/// Extinction time of one replica; `tau` is the stopping time when censored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtinctionSample {
    pub replica: u64,
    pub tau: f64,
    pub censored: bool,
}

/// Extinction times from the all-infected start, censored at `horizon` or
/// at `event_cap` events.
pub fn extinction_all_infected(
    params: &ContactParams,
    horizon: f64,
    reps: u64,
    seed: u64,
    event_cap: u64,
) -> Result<Vec<ExtinctionSample>> {
    params.validate()?;
    let all: Vec<u32> = (0..params.n).collect();
    let runs = par_replicas(seed, reps, |r, rng| {
        let t = simulate_contact(params, &all, horizon, &[], event_cap, rng).expect("validated");
        match t.extinction_time {
            Some(tau) => ExtinctionSample { replica: r, tau, censored: false },
            None => ExtinctionSample { replica: r, tau: t.stopped_at, censored: true },
        }
    });
    Ok(runs)
}

/// Monte Carlo estimate of `P(xi^A_t meets B)` with a uniform starting graph.
pub fn hit_probability(params: &ContactParams, a: &[u32], b: &[u32], t: f64, reps: u64, seed: u64) -> Result<Estimate> {
    params.validate()?;
    if let Some(&u) = a.iter().chain(b).find(|&&u| u >= params.n) {
        return Err(invalid("vertices", format!("vertex {} outside 1..={}", u + 1, params.n)));
    }
    let hits = par_replicas(seed, reps, |_, rng| {
        let graph = HalfEdgeMatching::sample_uniform(params.n, params.d, rng).expect("validated");
        let mut run = ContactRun::new(params, graph, a).expect("validated");
        run.advance(t, u64::MAX, rng);
        b.iter().any(|&u| run.is_infected(u))
    });
    let acc: MeanAcc = hits.into_iter().map(|h| if h { 1.0 } else { 0.0 }).collect();
    Ok(acc.estimate())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DualityGap {
    pub p1: Estimate,
    pub p2: Estimate,
    pub se: f64,
    pub z: f64,
}

/// Two independent estimates, of `P(xi^A_t meets B)` and `P(xi^B_t meets A)`.
pub fn duality_gap(params: &ContactParams, a: &[u32], b: &[u32], t: f64, reps: u64, seed: u64) -> Result<DualityGap> {
    let p1 = hit_probability(params, a, b, t, reps, derive_seed(seed, &[1]))?;
    let p2 = hit_probability(params, b, a, t, reps, derive_seed(seed, &[2]))?;
    let se = p1.se.hypot(p2.se);
    let gap = p1.mean - p2.mean;
    let z = if se > 0.0 {
        gap / se
    } else if gap == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(DualityGap { p1, p2, se, z })
}

/// Which marks a [`GraphicalRun`] generates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Marks {
    /// Every clock rings, marks at healthy vertices are no-ops.
    All,
    /// Only clocks of infected vertices (and the switch clock) are kept.
    /// A clock that resumes is first fast-forwarded through its own stream.
    InfectedOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkKind {
    Switch(SwitchCode),
    Recovery(u32),
    Transmission(HalfEdge),
}

/// A mark that changed the graph or at least one infected set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mark {
    pub time: f64,
    pub kind: MarkKind,
}

struct Clock {
    rng: SimRng,
    rate: f64,
    next: f64,
    version: u32,
}

impl Clock {
    fn ring(&mut self) {
        self.next += self.rng.sample::<f64, _>(Exp1) / self.rate;
    }
}

struct At(f64);

impl PartialEq for At {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for At {}

impl PartialOrd for At {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for At {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Explicit graphical construction. Clock `0` is the switch clock, clock
/// `1 + u` the recovery clock of `u`, clock `1 + n + h` the transmission
/// clock of half-edge `h`; clock `c` draws from stream `c` of `seed`.
pub struct GraphicalRun {
    params: ContactParams,
    marks: Marks,
    graph: HalfEdgeMatching,
    copies: Vec<Vec<bool>>,
    clocks: Vec<Clock>,
    queue: BinaryHeap<Reverse<(At, usize, u32)>>,
    pub time: f64,
    pub log: Vec<Mark>,
}

impl GraphicalRun {
    /// One copy of the infection per initial set, all driven by the same
    /// marks. [`Marks::InfectedOnly`] needs exactly one copy.
    pub fn new(params: &ContactParams, graph: HalfEdgeMatching, initials: &[Vec<u32>], marks: Marks, seed: u64) -> Result<Self> {
        params.validate()?;
        if graph.n() != params.n || graph.d() != params.d {
            return Err(invalid("graph", "size does not match n and d"));
        }
        if marks == Marks::InfectedOnly && initials.len() != 1 {
            return Err(invalid("initials", "infected-only marks drive a single copy"));
        }
        let n = params.n as usize;
        let mut copies = Vec::with_capacity(initials.len());
        for init in initials {
            let mut set = vec![false; n];
            for &u in init {
                if u >= params.n {
                    return Err(invalid("initial", format!("vertex {} outside 1..={}", u + 1, params.n)));
                }
                set[u as usize] = true;
            }
            copies.push(set);
        }
        let nd = n * params.d as usize;
        let clocks = (0..1 + n + nd)
            .map(|c| {
                let rate = if c == 0 {
                    params.switch_rate()
                } else if c <= n {
                    1.0
                } else {
                    params.lambda
                };
                let mut clock = Clock { rng: replica_rng(seed, c as u64), rate, next: 0.0, version: 0 };
                if rate > 0.0 {
                    clock.ring();
                } else {
                    clock.next = f64::INFINITY;
                }
                clock
            })
            .collect();
        let mut run = Self {
            params: *params,
            marks,
            graph,
            copies,
            clocks,
            queue: BinaryHeap::new(),
            time: 0.0,
            log: Vec::new(),
        };
        match marks {
            Marks::All => (0..run.clocks.len()).for_each(|c| run.schedule(c)),
            Marks::InfectedOnly => {
                run.schedule(0);
                for u in 0..params.n {
                    if run.copies[0][u as usize] {
                        run.wake(u);
                    }
                }
            }
        }
        Ok(run)
    }

    fn schedule(&mut self, c: usize) {
        let clock = &self.clocks[c];
        if clock.next.is_finite() {
            self.queue.push(Reverse((At(clock.next), c, clock.version)));
        }
    }

    fn vertex_clocks(&self, u: u32) -> impl Iterator<Item = usize> {
        let n = self.params.n as usize;
        let d = self.params.d as usize;
        let first = 1 + n + u as usize * d;
        std::iter::once(1 + u as usize).chain(first..first + d)
    }

    /// Resumes the clocks of a newly infected vertex.
    fn wake(&mut self, u: u32) {
        let now = self.time;
        let ids: Vec<usize> = self.vertex_clocks(u).collect();
        for c in ids {
            let clock = &mut self.clocks[c];
            while clock.next <= now {
                clock.ring();
            }
            clock.version += 1;
            self.schedule(c);
        }
    }

    fn sleep(&mut self, u: u32) {
        let ids: Vec<usize> = self.vertex_clocks(u).collect();
        for c in ids {
            self.clocks[c].version += 1;
        }
    }

    pub fn graph(&self) -> &HalfEdgeMatching {
        &self.graph
    }

    pub fn infected(&self, copy: usize) -> Vec<u32> {
        (0..self.params.n).filter(|&u| self.copies[copy][u as usize]).collect()
    }

    pub fn all_extinct(&self) -> bool {
        self.copies.iter().all(|c| !c.contains(&true))
    }

    /// Pathwise inclusion `copy i ⊆ copy i+1` for all consecutive copies.
    pub fn is_nested(&self) -> bool {
        self.copies.windows(2).all(|w| w[0].iter().zip(&w[1]).all(|(&a, &b)| !a || b))
    }

    /// Processes the next mark. `None` once all copies are extinct or the
    /// next mark lies beyond `until` (which is then left unconsumed).
    pub fn step(&mut self, until: f64) -> Option<&Mark> {
        let n = self.params.n as usize;
        let d = self.params.d;
        loop {
            if self.all_extinct() {
                return None;
            }
            let Reverse((At(t), c, version)) = *self.queue.peek()?;
            if version != self.clocks[c].version {
                self.queue.pop();
                continue;
            }
            if t > until {
                return None;
            }
            self.queue.pop();
            self.time = t;
            let mut changed = false;
            let kind;
            if c == 0 {
                let code = self.graph.sample_code(&mut self.clocks[0].rng);
                self.graph.apply_switch(&code).expect("sampled from current graph");
                kind = MarkKind::Switch(code);
                changed = true;
            } else if c <= n {
                let u = (c - 1) as u32;
                kind = MarkKind::Recovery(u);
                for set in &mut self.copies {
                    changed |= std::mem::replace(&mut set[u as usize], false);
                }
            } else {
                let h = HalfEdge((c - 1 - n) as u32);
                let (u, w) = (h.vertex(d), self.graph.partner(h).vertex(d));
                kind = MarkKind::Transmission(h);
                let mut newly = false;
                for set in &mut self.copies {
                    if set[u as usize] && !set[w as usize] {
                        set[w as usize] = true;
                        changed = true;
                    }
                }
                if changed && self.marks == Marks::InfectedOnly {
                    newly = true;
                }
                self.clocks[c].ring();
                self.schedule(c);
                if newly {
                    self.wake(w);
                }
                if changed {
                    self.log.push(Mark { time: t, kind });
                    return self.log.last();
                }
                continue;
            }
            self.clocks[c].ring();
            self.schedule(c);
            if let MarkKind::Recovery(u) = kind {
                if changed && self.marks == Marks::InfectedOnly {
                    self.sleep(u);
                }
            }
            if changed {
                self.log.push(Mark { time: t, kind });
                return self.log.last();
            }
        }
    }

    /// Runs to `until` or extinction of every copy.
    pub fn run(&mut self, until: f64) {
        while self.step(until).is_some() {}
        if !self.all_extinct() {
            self.time = until;
        }
    }
}

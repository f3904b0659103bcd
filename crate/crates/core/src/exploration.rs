//! The exploration process: the contact process from one vertex, revealing
//! pairings of the dynamic graph only when the infection or a switch
//! touches them.
//!
//! Unrevealed half-edges are implicit; given the explored state their
//! pairing is uniform, so a transmission along an unrevealed half-edge picks
//! its partner uniformly among the other unrevealed half-edges.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::contact::ContactParams;
use crate::error::{invalid, Error, Result};
use crate::graph::{check_half_edges, Edge, HalfEdge, HalfEdgeMatching, Sign, SwitchCode};
use crate::herds::HerdConfig;
use crate::tree_shapes::{canonical_code, CanonicalShapeCode};

const NONE: u32 = u32::MAX;

/// Infected set `A` and revealed independent edge set `E`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExploredState {
    n: u32,
    d: u32,
    infected: Vec<u32>,
    edges: Vec<Edge>,
    revealed: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ExploreEvent {
    Recovery(u32),
    /// Transmission along `from`; `revealed` is set when the edge was new.
    Transmission { from: HalfEdge, to: u32, revealed: bool },
    /// A revealed edge switched with an unrevealed one and is forgotten.
    Forget(Edge),
    /// Two revealed edges switched with each other.
    Rewire(SwitchCode),
}

/// Rates of the event categories from a state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExploreRates {
    pub recovery: f64,
    pub transmission: f64,
    /// Per revealed edge, switching with some unrevealed edge.
    pub forget_each: f64,
    /// Per unordered revealed pair and sign.
    pub rewire_each: f64,
    pub total: f64,
}

/// `C_f` used when none is configured: `8 (1 + lambda d + v)`.
pub fn default_c_f(params: &ContactParams) -> f64 {
    8.0 * (1.0 + params.lambda * f64::from(params.d) + params.v)
}

impl ExploredState {
    pub fn new(n: u32, d: u32, infected: &[u32], edges: &[Edge]) -> Result<Self> {
        check_half_edges(n, d)?;
        let nd = (n * d) as usize;
        let mut revealed = vec![NONE; nd];
        for e in edges {
            for h in [e.lo, e.hi] {
                if h.0 as usize >= nd || revealed[h.0 as usize] != NONE {
                    return Err(invalid("edges", "revealed edges must be independent and in range"));
                }
            }
            revealed[e.lo.0 as usize] = e.hi.0;
            revealed[e.hi.0 as usize] = e.lo.0;
        }
        if infected.iter().any(|&u| u >= n) {
            return Err(invalid("infected", "vertex out of range"));
        }
        let mut infected = infected.to_vec();
        infected.sort_unstable();
        infected.dedup();
        let mut edges = edges.to_vec();
        edges.sort_unstable();
        Ok(Self { n, d, infected, edges, revealed })
    }

    /// `({u}, empty)`.
    pub fn initial(n: u32, d: u32, u: u32) -> Result<Self> {
        Self::new(n, d, &[u], &[])
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn infected(&self) -> &[u32] {
        &self.infected
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn is_infected(&self, u: u32) -> bool {
        self.infected.binary_search(&u).is_ok()
    }

    pub fn revealed_partner(&self, h: HalfEdge) -> Option<HalfEdge> {
        match self.revealed[h.0 as usize] {
            NONE => None,
            p => Some(HalfEdge(p)),
        }
    }

    fn unrevealed_count(&self) -> u32 {
        self.n * self.d - 2 * self.edges.len() as u32
    }

    /// Vertices of the explored graph: `A` and all endpoints of `E`, sorted.
    pub fn vertex_set(&self) -> Vec<u32> {
        let d = self.d;
        let mut vs = self.infected.clone();
        vs.extend(self.edges.iter().flat_map(|e| [e.lo.vertex(d), e.hi.vertex(d)]));
        vs.sort_unstable();
        vs.dedup();
        vs
    }

    fn infect(&mut self, u: u32) -> bool {
        match self.infected.binary_search(&u) {
            Ok(_) => false,
            Err(i) => {
                self.infected.insert(i, u);
                true
            }
        }
    }

    fn recover(&mut self, u: u32) {
        if let Ok(i) = self.infected.binary_search(&u) {
            self.infected.remove(i);
        }
    }

    fn reveal(&mut self, e: Edge) {
        debug_assert!(self.revealed[e.lo.0 as usize] == NONE && self.revealed[e.hi.0 as usize] == NONE);
        self.revealed[e.lo.0 as usize] = e.hi.0;
        self.revealed[e.hi.0 as usize] = e.lo.0;
        let i = self.edges.binary_search(&e).unwrap_err();
        self.edges.insert(i, e);
    }

    fn forget(&mut self, e: &Edge) {
        self.revealed[e.lo.0 as usize] = NONE;
        self.revealed[e.hi.0 as usize] = NONE;
        let i = self.edges.binary_search(e).expect("forgetting a revealed edge");
        self.edges.remove(i);
    }

    fn rewire(&mut self, code: &SwitchCode) {
        self.forget(&code.e1);
        self.forget(&code.e2);
        let (f1, f2) = code.result();
        self.reveal(f1);
        self.reveal(f2);
    }

    pub fn rates(&self, params: &ContactParams) -> ExploreRates {
        let nd = f64::from(self.n * self.d);
        let k = self.edges.len() as f64;
        let a = self.infected.len() as f64;
        let recovery = a;
        let transmission = a * params.lambda * f64::from(self.d);
        let forget_each = 2.0 * (nd / 2.0 - k) * params.v / nd;
        let rewire_each = params.v / nd;
        let total = recovery + transmission + k * forget_each + k * (k - 1.0) * rewire_each;
        ExploreRates { recovery, transmission, forget_each, rewire_each, total }
    }

    /// Uniform unrevealed half-edge other than `h`.
    fn sample_unrevealed<R: Rng + ?Sized>(&self, h: HalfEdge, rng: &mut R) -> HalfEdge {
        let nd = self.n * self.d;
        let free = self.unrevealed_count() - 1;
        if free * 8 >= nd {
            loop {
                let c = rng.random_range(0..nd);
                if c != h.0 && self.revealed[c as usize] == NONE {
                    return HalfEdge(c);
                }
            }
        }
        let mut k = rng.random_range(0..free);
        for c in 0..nd {
            if c != h.0 && self.revealed[c as usize] == NONE {
                if k == 0 {
                    return HalfEdge(c);
                }
                k -= 1;
            }
        }
        unreachable!("an unrevealed half-edge has an unrevealed partner")
    }

    /// Draws the holding time and the next event, and applies it. `None`
    /// when nothing can happen.
    pub fn step<R: Rng + ?Sized>(&mut self, params: &ContactParams, rng: &mut R) -> Option<(ExploreEvent, f64)> {
        let dt = self.holding_time(params, rng)?;
        Some((self.apply_random(params, rng), dt))
    }

    pub fn holding_time<R: Rng + ?Sized>(&self, params: &ContactParams, rng: &mut R) -> Option<f64> {
        let total = self.rates(params).total;
        (total > 0.0).then(|| rng.sample::<f64, _>(Exp1) / total)
    }

    /// Applies one event drawn from the jump distribution. The total rate
    /// must be positive.
    pub fn apply_random<R: Rng + ?Sized>(&mut self, params: &ContactParams, rng: &mut R) -> ExploreEvent {
        let r = self.rates(params);
        let d = self.d;
        let mut x = rng.random::<f64>() * r.total;
        if x < r.recovery {
            let u = self.infected[(x as usize).min(self.infected.len() - 1)];
            self.recover(u);
            return ExploreEvent::Recovery(u);
        }
        x -= r.recovery;
        if x < r.transmission {
            let slots = self.infected.len() * d as usize;
            let i = ((x / params.lambda) as usize).min(slots - 1);
            let from = HalfEdge::new(self.infected[i / d as usize], (i % d as usize) as u32, d);
            let (to, revealed) = match self.revealed_partner(from) {
                Some(p) => (p.vertex(d), false),
                None => {
                    let p = self.sample_unrevealed(from, rng);
                    self.reveal(Edge::new(from, p));
                    (p.vertex(d), true)
                }
            };
            self.infect(to);
            return ExploreEvent::Transmission { from, to, revealed };
        }
        x -= r.transmission;
        let k = self.edges.len();
        let forget_total = k as f64 * r.forget_each;
        if x < forget_total {
            let e = self.edges[((x / r.forget_each) as usize).min(k - 1)];
            self.forget(&e);
            return ExploreEvent::Forget(e);
        }
        let i = rng.random_range(0..k);
        let j = loop {
            let j = rng.random_range(0..k);
            if j != i {
                break j;
            }
        };
        let sign = if rng.random::<bool>() { Sign::Plus } else { Sign::Minus };
        let code = SwitchCode::new(self.edges[i], self.edges[j], sign).expect("distinct revealed edges");
        self.rewire(&code);
        ExploreEvent::Rewire(code)
    }

    /// Every one-step transition with its rate. Reveals whose partner lies
    /// at a vertex outside the explored graph are lumped into one entry with
    /// a uniformly drawn representative; they all share the forest property
    /// and the image under [`ExploredState::psi`].
    pub fn transitions<R: Rng + ?Sized>(&self, params: &ContactParams, rng: &mut R) -> Vec<(ExploredState, f64)> {
        let d = self.d;
        let r = self.rates(params);
        let mut out = Vec::new();
        for &u in &self.infected {
            let mut y = self.clone();
            y.recover(u);
            out.push((y, 1.0));
        }
        if params.lambda > 0.0 {
            let verts = self.vertex_set();
            let free = f64::from(self.unrevealed_count() - 1);
            let fresh_vertices = self.n as usize - verts.len();
            for &u in &self.infected {
                for a in 0..d {
                    let h = HalfEdge::new(u, a, d);
                    if let Some(p) = self.revealed_partner(h) {
                        let w = p.vertex(d);
                        if !self.is_infected(w) {
                            let mut y = self.clone();
                            y.infect(w);
                            out.push((y, params.lambda));
                        }
                        continue;
                    }
                    for &w in &verts {
                        for b in 0..d {
                            let g = HalfEdge::new(w, b, d);
                            if g != h && self.revealed[g.0 as usize] == NONE {
                                let mut y = self.clone();
                                y.reveal(Edge::new(h, g));
                                y.infect(w);
                                out.push((y, params.lambda / free));
                            }
                        }
                    }
                    if fresh_vertices > 0 {
                        let w = loop {
                            let w = rng.random_range(0..self.n);
                            if verts.binary_search(&w).is_err() {
                                break w;
                            }
                        };
                        let g = HalfEdge::new(w, rng.random_range(0..d), d);
                        let mut y = self.clone();
                        y.reveal(Edge::new(h, g));
                        y.infect(w);
                        out.push((y, params.lambda * (fresh_vertices as f64 * f64::from(d)) / free));
                    }
                }
            }
        }
        if r.forget_each > 0.0 {
            for e in &self.edges {
                let mut y = self.clone();
                y.forget(e);
                out.push((y, r.forget_each));
            }
        }
        if r.rewire_each > 0.0 {
            for i in 0..self.edges.len() {
                for j in i + 1..self.edges.len() {
                    for sign in [Sign::Plus, Sign::Minus] {
                        let code = SwitchCode::new(self.edges[i], self.edges[j], sign).expect("distinct");
                        let mut y = self.clone();
                        y.rewire(&code);
                        out.push((y, r.rewire_each));
                    }
                }
            }
        }
        out
    }

    /// Adjacency of the explored graph on `vertex_set()` (local indices).
    fn local_graph(&self) -> (Vec<u32>, Vec<Vec<usize>>) {
        let d = self.d;
        let verts = self.vertex_set();
        let idx = |u: u32| verts.binary_search(&u).expect("endpoint in vertex set");
        let mut adj = vec![Vec::new(); verts.len()];
        for e in &self.edges {
            let (a, b) = (idx(e.lo.vertex(d)), idx(e.hi.vertex(d)));
            adj[a].push(b);
            if a != b {
                adj[b].push(a);
            } else {
                adj[a].push(a);
            }
        }
        (verts, adj)
    }

    /// Acyclic explored graph; a loop or a doubled edge is a cycle.
    pub fn is_forest(&self) -> bool {
        let d = self.d;
        let verts = self.vertex_set();
        let mut parent: Vec<usize> = (0..verts.len()).collect();
        fn root(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for e in &self.edges {
            let a = verts.binary_search(&e.lo.vertex(d)).expect("endpoint");
            let b = verts.binary_search(&e.hi.vertex(d)).expect("endpoint");
            let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
            if ra == rb {
                return false;
            }
            parent[ra] = rb;
        }
        true
    }

    /// Herd configuration modulo automorphisms: one canonical code per
    /// component holding infected vertices, computed on the smallest subtree
    /// spanning them. Sorted.
    pub fn psi(&self) -> Result<Vec<CanonicalShapeCode>> {
        if !self.is_forest() {
            return Err(Error::NotForest);
        }
        let (verts, adj) = self.local_graph();
        let marks: Vec<bool> = verts.iter().map(|&u| self.is_infected(u)).collect();
        // Strip uninfected leaves until every leaf is infected.
        let mut degree: Vec<usize> = adj.iter().map(Vec::len).collect();
        let mut alive = vec![true; verts.len()];
        let mut stack: Vec<usize> = (0..verts.len()).filter(|&i| !marks[i] && degree[i] <= 1).collect();
        while let Some(i) = stack.pop() {
            if !alive[i] {
                continue;
            }
            alive[i] = false;
            for &j in &adj[i] {
                if alive[j] {
                    degree[j] -= 1;
                    if !marks[j] && degree[j] <= 1 {
                        stack.push(j);
                    }
                }
            }
        }
        let mut seen = vec![false; verts.len()];
        let mut codes = Vec::new();
        for start in 0..verts.len() {
            if !alive[start] || seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut k = 0;
            while k < comp.len() {
                for &j in &adj[comp[k]] {
                    if alive[j] && !seen[j] {
                        seen[j] = true;
                        comp.push(j);
                    }
                }
                k += 1;
            }
            let local: BTreeMap<usize, usize> = comp.iter().enumerate().map(|(l, &g)| (g, l)).collect();
            let sub_adj: Vec<Vec<usize>> = comp
                .iter()
                .map(|&g| adj[g].iter().filter(|&&j| alive[j]).map(|j| local[j]).collect())
                .collect();
            let sub_marks: Vec<bool> = comp.iter().map(|&g| marks[g]).collect();
            codes.push(canonical_code(&sub_adj, &sub_marks));
        }
        codes.sort_unstable();
        Ok(codes)
    }

    /// `psi` as an embedded herd configuration.
    pub fn psi_config(&self) -> Result<HerdConfig> {
        let shapes = self
            .psi()?
            .iter()
            .map(|c| c.to_shape(self.d))
            .collect::<Result<Vec<_>>>()?;
        Ok(HerdConfig::from_shapes(self.d, shapes))
    }

    /// `C_f (|A| + |E|)^2 / n`.
    pub fn f_bound(&self, c_f: f64) -> f64 {
        let s = (self.infected.len() + self.edges.len()) as f64;
        c_f * s * s / f64::from(self.n)
    }
}

/// The exploration read off a full simulation of the graph and the contact
/// process: marks and switches come from the full dynamics, and the
/// explored state follows the reveal and forget rules. Every revealed edge
/// must then be an edge of the current graph.
#[derive(Debug, Clone)]
pub struct PairedExploration {
    params: ContactParams,
    graph: HalfEdgeMatching,
    state: ExploredState,
    switch_rate: f64,
    pub time: f64,
}

impl PairedExploration {
    pub fn new(params: &ContactParams, graph: HalfEdgeMatching, u: u32) -> Result<Self> {
        params.validate()?;
        if graph.n() != params.n || graph.d() != params.d {
            return Err(invalid("graph", "size does not match n and d"));
        }
        Ok(Self {
            params: *params,
            state: ExploredState::initial(params.n, params.d, u)?,
            graph,
            switch_rate: params.switch_rate(),
            time: 0.0,
        })
    }

    pub fn state(&self) -> &ExploredState {
        &self.state
    }

    pub fn graph(&self) -> &HalfEdgeMatching {
        &self.graph
    }

    pub fn revealed_edges_present(&self) -> bool {
        self.state.edges.iter().all(|e| self.graph.contains(e))
    }

    fn is_revealed(&self, e: &Edge) -> bool {
        self.state.revealed[e.lo.0 as usize] == e.hi.0
    }

    /// One event of the full dynamics. Returns the explored-state event it
    /// caused, if any, and the holding time; `None` after extinction.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<(Option<ExploreEvent>, f64)> {
        let d = self.params.d;
        let k = self.state.infected.len();
        if k == 0 {
            return None;
        }
        let rate = self.switch_rate + k as f64 * (1.0 + self.params.lambda * f64::from(d));
        let dt = rng.sample::<f64, _>(Exp1) / rate;
        self.time += dt;
        let x = rng.random::<f64>() * rate - self.switch_rate;
        let event = if x < 0.0 {
            let code = self.graph.sample_code(rng);
            let hit = (self.is_revealed(&code.e1), self.is_revealed(&code.e2));
            self.graph.apply_switch(&code).expect("sampled from current graph");
            match hit {
                (true, true) => {
                    self.state.rewire(&code);
                    Some(ExploreEvent::Rewire(code))
                }
                (true, false) | (false, true) => {
                    let e = if hit.0 { code.e1 } else { code.e2 };
                    self.state.forget(&e);
                    Some(ExploreEvent::Forget(e))
                }
                (false, false) => None,
            }
        } else if x < k as f64 {
            let u = self.state.infected[(x as usize).min(k - 1)];
            self.state.recover(u);
            Some(ExploreEvent::Recovery(u))
        } else {
            let i = (((x - k as f64) / self.params.lambda) as usize).min(k * d as usize - 1);
            let from = HalfEdge::new(self.state.infected[i / d as usize], (i % d as usize) as u32, d);
            let p = self.graph.partner(from);
            let revealed = self.state.revealed_partner(from).is_none();
            if revealed {
                self.state.reveal(Edge::new(from, p));
            }
            let to = p.vertex(d);
            self.state.infect(to);
            Some(ExploreEvent::Transmission { from, to, revealed })
        };
        Some((event, dt))
    }
}

/// JSON snapshot of an explored state, 1-based.
#[derive(Debug, Clone, Serialize)]
pub struct StateSnapshot {
    pub infected: Vec<u32>,
    pub edges: Vec<[[u32; 2]; 2]>,
}

impl From<&ExploredState> for StateSnapshot {
    fn from(s: &ExploredState) -> Self {
        let d = s.d;
        let one = |h: HalfEdge| [h.vertex(d) + 1, h.slot(d) + 1];
        Self {
            infected: s.infected.iter().map(|u| u + 1).collect(),
            edges: s.edges.iter().map(|e| [one(e.lo), one(e.hi)]).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExploreSample {
    pub t: f64,
    pub infected: usize,
    pub revealed: usize,
    pub forest: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExploreTrajectory {
    pub samples: Vec<ExploreSample>,
    pub extinction_time: Option<f64>,
    /// First time the explored graph stopped being a forest.
    pub first_cycle: Option<f64>,
    pub events: u64,
}

/// Runs the exploration from `({u}, empty)` until `horizon` or extinction.
pub fn simulate_exploration<R: Rng + ?Sized>(
    params: &ContactParams,
    u: u32,
    horizon: f64,
    sample_times: &[f64],
    rng: &mut R,
) -> Result<ExploreTrajectory> {
    params.validate()?;
    let mut state = ExploredState::initial(params.n, params.d, u)?;
    let mut t = 0.0;
    let mut events = 0;
    let mut first_cycle = None;
    let mut samples = Vec::with_capacity(sample_times.len());
    let mut pending = sample_times.iter().copied().filter(|&s| s <= horizon).peekable();
    let snapshot = |s: f64, st: &ExploredState| ExploreSample {
        t: s,
        infected: st.infected.len(),
        revealed: st.edges.len(),
        forest: st.is_forest(),
    };
    // Once the infection is gone the revealed edges no longer matter.
    while !state.infected.is_empty() {
        let dt = state.holding_time(params, rng).expect("infected vertices keep the rate positive");
        let t_next = t + dt;
        while let Some(s) = pending.next_if(|&s| s < t_next) {
            samples.push(snapshot(s, &state));
        }
        if t_next > horizon {
            break;
        }
        t = t_next;
        state.apply_random(params, rng);
        events += 1;
        if first_cycle.is_none() && !state.is_forest() {
            first_cycle = Some(t);
        }
    }
    let extinction_time = state.infected.is_empty().then_some(t);
    samples.extend(pending.map(|s| snapshot(s, &state)));
    Ok(ExploreTrajectory { samples, extinction_time, first_cycle, events })
}

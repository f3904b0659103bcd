//! The k-type herds process: every type dies and reproduces as in the
//! single-type process, ignoring the others, while all types of a herd
//! share its splitting events (splits happen at active edges of the union).

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::herds::{EventKind, HerdConfig, HerdsParams};
use crate::sum_tree::SumTree;
use crate::tree_shapes::{HerdShape, TreeEdge, TreeVertex};

/// k occupant sets sharing one embedding. Some may be empty, not all.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypedHerd {
    union: HerdShape,
    sets: Vec<Vec<TreeVertex>>,
}

fn boundary_count(d: u32, set: &[TreeVertex]) -> u64 {
    let inner = set
        .iter()
        .filter(|x| x.parent().is_some_and(|p| set.binary_search(&p).is_ok()))
        .count() as u64;
    u64::from(d) * set.len() as u64 - 2 * inner
}

impl TypedHerd {
    pub fn new(d: u32, mut sets: Vec<Vec<TreeVertex>>) -> Result<Self> {
        for s in &mut sets {
            s.sort_unstable();
            s.dedup();
        }
        let all: Vec<TreeVertex> = sets.iter().flatten().cloned().collect();
        let union = HerdShape::new(d, all)?;
        Ok(Self { union, sets })
    }

    pub fn union(&self) -> &HerdShape {
        &self.union
    }

    pub fn set(&self, j: usize) -> &[TreeVertex] {
        &self.sets[j]
    }

    pub fn types(&self) -> usize {
        self.sets.len()
    }

    /// `sum_j |A_j|`.
    pub fn typed_particles(&self) -> u64 {
        self.sets.iter().map(|s| s.len() as u64).sum()
    }

    /// `sum_j` boundary pairs of `A_j`.
    pub fn typed_boundary(&self) -> u64 {
        let d = self.union.degree();
        self.sets.iter().map(|s| boundary_count(d, s)).sum()
    }

    fn rebuild(d: u32, sets: Vec<Vec<TreeVertex>>) -> Option<Self> {
        let all: Vec<TreeVertex> = sets.iter().flatten().cloned().collect();
        HerdShape::new(d, all).ok().map(|union| Self { union, sets })
    }

    /// Split at an active edge of the union; every type is divided.
    pub fn split(&self, e: &TreeEdge) -> Result<(TypedHerd, TypedHerd)> {
        if !self.union.is_active(e) {
            return Err(Error::InactiveEdge(e.child().to_string()));
        }
        let d = self.union.degree();
        let mut near = Vec::with_capacity(self.sets.len());
        let mut far = Vec::with_capacity(self.sets.len());
        for s in &self.sets {
            let (f, n): (Vec<_>, Vec<_>) = s.iter().cloned().partition(|x| x.is_descendant_of(e.child()));
            near.push(n);
            far.push(f);
        }
        Ok((
            Self::rebuild(d, near).expect("active edge leaves particles on the near side"),
            Self::rebuild(d, far).expect("active edge leaves particles on the far side"),
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypedEvent {
    pub kind: EventKind,
    /// The type that died or reproduced; `None` for splits.
    pub type_index: Option<usize>,
    pub herd: usize,
    pub time: f64,
}

/// Which herd configuration to read off a typed configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Projection {
    /// Every herd becomes its union shape.
    Union,
    /// Herds with a nonempty type-`j` set become that set.
    Type(usize),
}

#[derive(Debug, Clone)]
pub struct TypedConfig {
    d: u32,
    k: usize,
    herds: Vec<TypedHerd>,
    particles: SumTree,
    boundary: SumTree,
    edges: SumTree,
    per_type: Vec<u64>,
}

impl TypedConfig {
    pub fn new(d: u32, k: usize, herds: Vec<TypedHerd>) -> Result<Self> {
        if k == 0 {
            return Err(invalid("k", "need at least one type"));
        }
        let mut c = Self {
            d,
            k,
            herds: Vec::new(),
            particles: SumTree::new(),
            boundary: SumTree::new(),
            edges: SumTree::new(),
            per_type: vec![0; k],
        };
        for h in herds {
            if h.types() != k || h.union.degree() != d {
                return Err(invalid("herds", "every herd needs k sets on the same tree"));
            }
            c.push(h);
        }
        Ok(c)
    }

    fn push(&mut self, h: TypedHerd) {
        self.particles.push(h.typed_particles());
        self.boundary.push(h.typed_boundary());
        self.edges.push(h.union.active_edge_count() as u64);
        for (j, s) in h.sets.iter().enumerate() {
            self.per_type[j] += s.len() as u64;
        }
        self.herds.push(h);
    }

    fn take(&mut self, i: usize) -> TypedHerd {
        self.particles.swap_remove(i);
        self.boundary.swap_remove(i);
        self.edges.swap_remove(i);
        let h = self.herds.swap_remove(i);
        for (j, s) in h.sets.iter().enumerate() {
            self.per_type[j] -= s.len() as u64;
        }
        h
    }

    pub fn herds(&self) -> &[TypedHerd] {
        &self.herds
    }

    pub fn types(&self) -> usize {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        self.herds.is_empty()
    }

    pub fn type_particles(&self, j: usize) -> u64 {
        self.per_type[j]
    }

    /// `X(pi(xi))`: particles of the union projection.
    pub fn union_particles(&self) -> u64 {
        self.herds.iter().map(|h| h.union.particle_count() as u64).sum()
    }

    /// Recomputes per-type totals and weights from scratch.
    pub fn check_consistency(&self) -> Result<()> {
        let mut per_type = vec![0u64; self.k];
        for (i, h) in self.herds.iter().enumerate() {
            for (j, s) in h.sets.iter().enumerate() {
                per_type[j] += s.len() as u64;
            }
            if self.particles.get(i) != h.typed_particles()
                || self.boundary.get(i) != h.typed_boundary()
                || self.edges.get(i) != h.union.active_edge_count() as u64
            {
                return Err(Error::RateInconsistency(format!("stale weights for typed herd {i}")));
            }
        }
        if per_type != self.per_type {
            return Err(Error::RateInconsistency("per-type totals drifted".into()));
        }
        Ok(())
    }

    pub fn project(&self, which: Projection) -> HerdConfig {
        let shapes = match which {
            Projection::Union => self.herds.iter().map(|h| h.union.clone()).collect(),
            Projection::Type(j) => self
                .herds
                .iter()
                .filter(|h| !h.sets[j].is_empty())
                .map(|h| HerdShape::new(self.d, h.sets[j].clone()).expect("nonempty set"))
                .collect(),
        };
        HerdConfig::from_shapes(self.d, shapes)
    }

    fn total_rate(&self, p: &HerdsParams) -> (f64, f64, f64) {
        (
            self.particles.total() as f64,
            p.lambda * self.boundary.total() as f64,
            p.v * self.edges.total() as f64,
        )
    }

    /// One event of the k-type process, or `None` if absorbed.
    pub fn typed_step<R: Rng + ?Sized>(&mut self, p: &HerdsParams, now: f64, rng: &mut R) -> Option<TypedEvent> {
        let (death, birth, split) = self.total_rate(p);
        let total = death + birth + split;
        if total <= 0.0 {
            return None;
        }
        let time = now + rng.sample::<f64, _>(Exp1) / total;
        let (kind, type_index, herd) = self.apply_random(p, (death, birth, split), rng);
        Some(TypedEvent {
            kind,
            type_index,
            herd,
            time,
        })
    }

    fn apply_random<R: Rng + ?Sized>(
        &mut self,
        p: &HerdsParams,
        (death, birth, split): (f64, f64, f64),
        rng: &mut R,
    ) -> (EventKind, Option<usize>, usize) {
        let r = rng.random::<f64>() * (death + birth + split);
        if r < death {
            let k = (r as u64).min(self.particles.total() - 1);
            let i = self.particles.find(k);
            let mut off = (k - self.particles.prefix(i)) as usize;
            let mut h = self.take(i);
            let mut j = 0;
            while off >= h.sets[j].len() {
                off -= h.sets[j].len();
                j += 1;
            }
            h.sets[j].remove(off);
            if let Some(h) = TypedHerd::rebuild(self.d, h.sets) {
                self.push(h);
            }
            (EventKind::Death, Some(j), i)
        } else if r < death + birth {
            let k = (((r - death) / p.lambda) as u64).min(self.boundary.total() - 1);
            let i = self.boundary.find(k);
            let mut h = self.take(i);
            let (j, y) = loop {
                let mut off = rng.random_range(0..h.typed_particles()) as usize;
                let mut j = 0;
                while off >= h.sets[j].len() {
                    off -= h.sets[j].len();
                    j += 1;
                }
                let y = h.sets[j][off].neighbor_slot(rng.random_range(0..self.d), self.d);
                if h.sets[j].binary_search(&y).is_err() {
                    break (j, y);
                }
            };
            let at = h.sets[j].binary_search(&y).expect_err("vacant for this type");
            h.sets[j].insert(at, y);
            self.push(TypedHerd::rebuild(self.d, h.sets).expect("nonempty"));
            (EventKind::Birth, Some(j), i)
        } else {
            let k = (((r - death - birth) / p.v) as u64).min(self.edges.total() - 1);
            let i = self.edges.find(k);
            let off = (k - self.edges.prefix(i)) as usize;
            let h = self.take(i);
            let child = h.union.steiner_vertices()[off + 1].clone();
            let edge = TreeEdge::above(child).expect("non-top steiner vertex");
            let (a, b) = h.split(&edge).expect("active edge of the union");
            self.push(a);
            self.push(b);
            (EventKind::Split, None, i)
        }
    }
}

/// Per-type and union particle counts at a sample time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypedObservation {
    pub t: f64,
    pub per_type: Vec<u64>,
    pub union: u64,
}

/// Simulates the k-type process and records counts at `sample_times`.
pub fn simulate_typed<R: Rng + ?Sized>(
    initial: &TypedConfig,
    params: &HerdsParams,
    sample_times: &[f64],
    rng: &mut R,
) -> Vec<TypedObservation> {
    let mut c = initial.clone();
    let mut time = 0.0;
    let mut out = Vec::with_capacity(sample_times.len());
    for &t in sample_times {
        loop {
            let (death, birth, split) = c.total_rate(params);
            let total = death + birth + split;
            if total <= 0.0 {
                break;
            }
            let next = time + rng.sample::<f64, _>(Exp1) / total;
            if next > t {
                break;
            }
            time = next;
            c.apply_random(params, (death, birth, split), rng);
        }
        time = t;
        out.push(TypedObservation {
            t,
            per_type: c.per_type.clone(),
            union: c.union_particles(),
        });
    }
    out
}

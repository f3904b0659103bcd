//! Random d-regular multigraphs as perfect matchings of half-edges, and the
//! edge-switching dynamics on them.
//!
//! Half-edge `(u, a)` with `u in 0..n`, `a in 0..d` has flat index `u*d + a`.
//! Printed and serialized forms are 1-based.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct HalfEdge(pub u32);

impl HalfEdge {
    pub fn new(u: u32, a: u32, d: u32) -> Self {
        debug_assert!(a < d);
        Self(u * d + a)
    }

    pub fn vertex(self, d: u32) -> u32 {
        self.0 / d
    }

    pub fn slot(self, d: u32) -> u32 {
        self.0 % d
    }
}

/// An edge as an ordered pair of half-edges, `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Edge {
    pub lo: HalfEdge,
    pub hi: HalfEdge,
}

impl Edge {
    pub fn new(a: HalfEdge, b: HalfEdge) -> Self {
        debug_assert_ne!(a, b);
        if a < b {
            Self { lo: a, hi: b }
        } else {
            Self { lo: b, hi: a }
        }
    }

    pub fn is_loop(&self, d: u32) -> bool {
        self.lo.vertex(d) == self.hi.vertex(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

/// A switch: two distinct edges and a sign. `Plus` pairs the two smaller
/// half-edges together and the two larger ones together; `Minus` pairs
/// each smaller half-edge with the other edge's larger one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct SwitchCode {
    pub e1: Edge,
    pub e2: Edge,
    pub sign: Sign,
}

impl SwitchCode {
    pub fn new(e1: Edge, e2: Edge, sign: Sign) -> Result<Self> {
        if e1 == e2 {
            return Err(invalid("switch", "the two edges must be distinct"));
        }
        Ok(Self { e1, e2, sign })
    }

    /// The two edges that replace `e1` and `e2`.
    pub fn result(&self) -> (Edge, Edge) {
        let (a, b) = (self.e1, self.e2);
        match self.sign {
            Sign::Plus => (Edge::new(a.lo, b.lo), Edge::new(a.hi, b.hi)),
            Sign::Minus => (Edge::new(a.lo, b.hi), Edge::new(a.hi, b.lo)),
        }
    }

    /// A code that undoes this one once it has been applied.
    pub fn inverse(&self) -> SwitchCode {
        let (f1, f2) = self.result();
        [Sign::Plus, Sign::Minus]
            .into_iter()
            .map(|sign| SwitchCode { e1: f1, e2: f2, sign })
            .find(|c| {
                let (g1, g2) = c.result();
                (g1 == self.e1 && g2 == self.e2) || (g1 == self.e2 && g2 == self.e1)
            })
            .expect("one of the two signs restores the original edges")
    }
}

/// A fixed-point-free involution on the `n*d` half-edges.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct HalfEdgeMatching {
    n: u32,
    d: u32,
    partner: Vec<u32>,
}

impl fmt::Debug for HalfEdgeMatching {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for HalfEdgeMatching {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.d;
        let parts: Vec<String> = self
            .edges()
            .iter()
            .map(|e| {
                format!(
                    "{{({},{}),({},{})}}",
                    e.lo.vertex(d) + 1,
                    e.lo.slot(d) + 1,
                    e.hi.vertex(d) + 1,
                    e.hi.slot(d) + 1
                )
            })
            .collect();
        write!(f, "{}", parts.join(" "))
    }
}

/// Serialized as the sorted list of 1-based `[[u, a], [v, b]]` pairs.
impl Serialize for HalfEdgeMatching {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let d = self.d;
        let pairs: Vec<[[u32; 2]; 2]> = self
            .edges()
            .iter()
            .map(|e| {
                [
                    [e.lo.vertex(d) + 1, e.lo.slot(d) + 1],
                    [e.hi.vertex(d) + 1, e.hi.slot(d) + 1],
                ]
            })
            .collect();
        pairs.serialize(s)
    }
}

pub fn check_half_edges(n: u32, d: u32) -> Result<()> {
    if n == 0 {
        return Err(invalid("n", "need at least one vertex"));
    }
    if d == 0 {
        return Err(invalid("d", "need at least one half-edge per vertex"));
    }
    let nd = n as usize * d as usize;
    if nd % 2 == 1 {
        return Err(Error::OddHalfEdges(nd));
    }
    Ok(())
}

impl HalfEdgeMatching {
    /// Builds from explicit edges, checking that they form a perfect matching.
    pub fn from_edges(n: u32, d: u32, edges: &[Edge]) -> Result<Self> {
        check_half_edges(n, d)?;
        let nd = (n * d) as usize;
        let mut partner = vec![u32::MAX; nd];
        for e in edges {
            for h in [e.lo, e.hi] {
                if h.0 as usize >= nd || partner[h.0 as usize] != u32::MAX {
                    return Err(invalid("edges", "not a perfect matching"));
                }
            }
            partner[e.lo.0 as usize] = e.hi.0;
            partner[e.hi.0 as usize] = e.lo.0;
        }
        if partner.contains(&u32::MAX) {
            return Err(invalid("edges", "some half-edges are unmatched"));
        }
        Ok(Self { n, d, partner })
    }

    /// Uniform perfect matching: shuffle the half-edges, pair neighbours.
    pub fn sample_uniform<R: Rng + ?Sized>(n: u32, d: u32, rng: &mut R) -> Result<Self> {
        check_half_edges(n, d)?;
        let nd = n * d;
        let mut order: Vec<u32> = (0..nd).collect();
        order.shuffle(rng);
        let mut partner = vec![0; nd as usize];
        for pair in order.chunks_exact(2) {
            partner[pair[0] as usize] = pair[1];
            partner[pair[1] as usize] = pair[0];
        }
        Ok(Self { n, d, partner })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn half_edge_count(&self) -> u32 {
        self.n * self.d
    }

    pub fn edge_count(&self) -> usize {
        self.partner.len() / 2
    }

    #[inline]
    pub fn partner(&self, h: HalfEdge) -> HalfEdge {
        HalfEdge(self.partner[h.0 as usize])
    }

    /// Vertex at the other end of half-edge `(u, a)`.
    #[inline]
    pub fn neighbor(&self, u: u32, a: u32) -> u32 {
        self.partner[(u * self.d + a) as usize] / self.d
    }

    pub fn contains(&self, e: &Edge) -> bool {
        self.partner.get(e.lo.0 as usize) == Some(&e.hi.0)
    }

    pub fn edge_of(&self, h: HalfEdge) -> Edge {
        Edge::new(h, self.partner(h))
    }

    /// Sorted edge list.
    pub fn edges(&self) -> Vec<Edge> {
        (0..self.partner.len() as u32)
            .filter(|&h| h < self.partner[h as usize])
            .map(|h| Edge::new(HalfEdge(h), HalfEdge(self.partner[h as usize])))
            .collect()
    }

    /// Involution without fixed points.
    pub fn is_valid(&self) -> bool {
        self.partner
            .iter()
            .enumerate()
            .all(|(h, &p)| p as usize != h && (p as usize) < self.partner.len() && self.partner[p as usize] as usize == h)
    }

    pub fn apply_switch(&mut self, m: &SwitchCode) -> Result<()> {
        if m.e1 == m.e2 {
            return Err(invalid("switch", "the two edges must be distinct"));
        }
        if !self.contains(&m.e1) || !self.contains(&m.e2) {
            return Err(Error::StaleEdge);
        }
        let (f1, f2) = m.result();
        for f in [f1, f2] {
            self.partner[f.lo.0 as usize] = f.hi.0;
            self.partner[f.hi.0 as usize] = f.lo.0;
        }
        Ok(())
    }

    /// Uniform switch code: two distinct edges, each picked through a
    /// uniform half-edge, and a fair sign.
    pub fn sample_code<R: Rng + ?Sized>(&self, rng: &mut R) -> SwitchCode {
        let nd = self.half_edge_count();
        let h1 = HalfEdge(rng.random_range(0..nd));
        let e1 = self.edge_of(h1);
        let e2 = loop {
            let h2 = HalfEdge(rng.random_range(0..nd));
            let e = self.edge_of(h2);
            if e != e1 {
                break e;
            }
        };
        let sign = if rng.random::<bool>() { Sign::Plus } else { Sign::Minus };
        SwitchCode { e1, e2, sign }
    }

    /// Applies a uniform switch in place, without building the code.
    #[inline]
    pub fn random_switch<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let nd = self.half_edge_count();
        let a = rng.random_range(0..nd);
        let a2 = self.partner[a as usize];
        let (b, b2) = loop {
            let b = rng.random_range(0..nd);
            if b != a && b != a2 {
                break (b, self.partner[b as usize]);
            }
        };
        let (lo1, hi1) = if a < a2 { (a, a2) } else { (a2, a) };
        let (lo2, hi2) = if b < b2 { (b, b2) } else { (b2, b) };
        let (x, y, z, w) = if rng.random::<bool>() {
            (lo1, lo2, hi1, hi2)
        } else {
            (lo1, hi2, hi1, lo2)
        };
        self.partner[x as usize] = y;
        self.partner[y as usize] = x;
        self.partner[z as usize] = w;
        self.partner[w as usize] = z;
    }
}

/// `2 * C(nd/2, 2) * v / (nd)`: total rate of the switch clock.
pub fn switch_clock_rate(n: u32, d: u32, v: f64) -> Result<f64> {
    check_half_edges(n, d)?;
    let nd = f64::from(n) * f64::from(d);
    let m = nd / 2.0;
    Ok(m * (m - 1.0) * v / nd)
}

/// Rate at which a given edge takes part in some switch: `v (1 - 2/(nd))`.
pub fn edge_involvement_rate(n: u32, d: u32, v: f64) -> Result<f64> {
    check_half_edges(n, d)?;
    let nd = f64::from(n) * f64::from(d);
    let m = nd / 2.0;
    Ok(2.0 * (m - 1.0) * v / nd)
}

/// One jump of the switching chain: holding time and the code applied.
pub fn graph_step<R: Rng + ?Sized>(g: &mut HalfEdgeMatching, v: f64, rng: &mut R) -> Option<(f64, SwitchCode)> {
    let rate = switch_clock_rate(g.n, g.d, v).ok()?;
    if rate <= 0.0 {
        return None;
    }
    let dt = rng.sample::<f64, _>(Exp1) / rate;
    let code = g.sample_code(rng);
    g.apply_switch(&code).expect("sampled code refers to current edges");
    Some((dt, code))
}

/// One row of a switch log.
#[derive(Debug, Clone, Serialize)]
pub struct SwitchLogRow {
    pub time: f64,
    pub e1: String,
    pub e2: String,
    pub sign: Sign,
}

pub fn edge_label(e: &Edge, d: u32) -> String {
    format!(
        "({},{})-({},{})",
        e.lo.vertex(d) + 1,
        e.lo.slot(d) + 1,
        e.hi.vertex(d) + 1,
        e.hi.slot(d) + 1
    )
}

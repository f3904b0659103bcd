//! Geometry of the infinite d-regular tree.
//!
//! Vertices are addressed by label words anchored at the root `o`: the root
//! has `d` children labelled `0..d`, every other vertex has `d - 1` children
//! labelled `0..d-1` (its parent edge is implicit). With this encoding the
//! lexicographic order on addresses is a depth-first preorder, so the
//! vertices below a given vertex form a contiguous run of any sorted set.
//!
//! A [`HerdShape`] is a finite nonempty particle set. Its active edges are the
//! edges of the minimal subtree spanning the particles (the Steiner tree),
//! which is cached together with the boundary-pair count.

use std::cmp::Ordering;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// A vertex of the infinite d-regular tree, given by its root-anchored
/// address.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct TreeVertex {
    labels: SmallVec<[u8; 16]>,
}

impl TreeVertex {
    pub fn root() -> Self {
        Self::default()
    }

    pub fn from_labels(labels: &[u8]) -> Self {
        Self {
            labels: SmallVec::from_slice(labels),
        }
    }

    /// Like [`from_labels`](Self::from_labels) but checks every label
    /// against the degree.
    pub fn checked(labels: &[u8], d: u32) -> Result<Self> {
        for (depth, &label) in labels.iter().enumerate() {
            let limit = if depth == 0 { d } else { d - 1 };
            if u32::from(label) >= limit {
                return Err(Error::BadAddress { label, depth, d });
            }
        }
        Ok(Self::from_labels(labels))
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn is_root(&self) -> bool {
        self.labels.is_empty()
    }

    /// Graph distance to the root.
    pub fn depth(&self) -> usize {
        self.labels.len()
    }

    pub fn parent(&self) -> Option<TreeVertex> {
        if self.labels.is_empty() {
            None
        } else {
            Some(Self::from_labels(&self.labels[..self.labels.len() - 1]))
        }
    }

    pub fn child(&self, label: u8) -> TreeVertex {
        let mut labels = self.labels.clone();
        labels.push(label);
        Self { labels }
    }

    /// Number of children in the rooted picture.
    pub fn child_count(&self, d: u32) -> u32 {
        if self.is_root() {
            d
        } else {
            d - 1
        }
    }

    /// Whether `self` lies in the subtree below `ancestor` (inclusive).
    pub fn is_descendant_of(&self, ancestor: &TreeVertex) -> bool {
        self.labels.starts_with(&ancestor.labels)
    }

    /// The `d` neighbours: parent first (if any), then the children.
    pub fn neighbors(&self, d: u32) -> Vec<TreeVertex> {
        let mut out = Vec::with_capacity(d as usize);
        if let Some(p) = self.parent() {
            out.push(p);
        }
        for label in 0..self.child_count(d) {
            out.push(self.child(label as u8));
        }
        out
    }

    /// The neighbour behind slot `slot` in `0..d`: slot 0 of a non-root
    /// vertex is its parent, the remaining slots are its children.
    pub fn neighbor_slot(&self, slot: u32, d: u32) -> TreeVertex {
        debug_assert!(slot < d);
        if self.is_root() {
            self.child(slot as u8)
        } else if slot == 0 {
            self.parent().expect("non-root vertex has a parent")
        } else {
            self.child((slot - 1) as u8)
        }
    }

    pub fn is_adjacent(&self, other: &TreeVertex) -> bool {
        let (a, b) = (&self.labels, &other.labels);
        (a.len() + 1 == b.len() && b.starts_with(a)) || (b.len() + 1 == a.len() && a.starts_with(b))
    }

    /// Graph distance between two vertices.
    pub fn distance(&self, other: &TreeVertex) -> usize {
        let common = common_prefix_len(&self.labels, &other.labels);
        self.labels.len() + other.labels.len() - 2 * common
    }
}

impl fmt::Debug for TreeVertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for TreeVertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.labels.is_empty() {
            return write!(f, "o");
        }
        write!(f, "[")?;
        for (i, l) in self.labels.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{l}")?;
        }
        write!(f, "]")
    }
}

impl Serialize for TreeVertex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.labels.as_slice().serialize(s)
    }
}

impl<'de> Deserialize<'de> for TreeVertex {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let labels = Vec::<u8>::deserialize(d)?;
        Ok(Self::from_labels(&labels))
    }
}

fn common_prefix_len(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

/// A tree edge, identified by its endpoint farther from the root.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct TreeEdge {
    child: TreeVertex,
}

impl TreeEdge {
    pub fn above(child: TreeVertex) -> Result<Self> {
        if child.is_root() {
            return Err(Error::InactiveEdge("o".into()));
        }
        Ok(Self { child })
    }

    pub fn child(&self) -> &TreeVertex {
        &self.child
    }

    pub fn parent(&self) -> TreeVertex {
        self.child.parent().expect("edge child is never the root")
    }
}

/// A finite nonempty set of particles with cached aggregates.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct HerdShape {
    d: u32,
    /// Sorted, deduplicated.
    particles: Vec<TreeVertex>,
    /// Sorted vertex set of the spanning subtree; the first entry is its
    /// topmost vertex.
    steiner: Vec<TreeVertex>,
    boundary_pairs: u64,
}

impl fmt::Debug for HerdShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.particles.iter()).finish()
    }
}

impl HerdShape {
    pub fn new(d: u32, particles: Vec<TreeVertex>) -> Result<Self> {
        if d < 2 {
            return Err(crate::error::invalid("d", "tree degree must be at least 2"));
        }
        for p in &particles {
            TreeVertex::checked(p.labels(), d)?;
        }
        Self::from_trusted(d, particles)
    }

    /// Builds from addresses already known to be valid for `d`.
    fn from_trusted(d: u32, mut particles: Vec<TreeVertex>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::EmptyShape);
        }
        particles.sort_unstable();
        particles.dedup();
        let first = &particles[0];
        let last = &particles[particles.len() - 1];
        let top_len = common_prefix_len(first.labels(), last.labels());

        let mut steiner: Vec<TreeVertex> = Vec::with_capacity(particles.len() * 2);
        for p in &particles {
            for len in top_len..=p.depth() {
                steiner.push(TreeVertex::from_labels(&p.labels()[..len]));
            }
        }
        steiner.sort_unstable();
        steiner.dedup();

        let adjacent = particles
            .iter()
            .filter(|p| {
                p.parent()
                    .is_some_and(|q| particles.binary_search(&q).is_ok())
            })
            .count() as u64;
        let boundary_pairs = u64::from(d) * particles.len() as u64 - 2 * adjacent;
        Ok(Self {
            d,
            particles,
            steiner,
            boundary_pairs,
        })
    }

    pub fn singleton(d: u32) -> Self {
        Self::from_trusted(d, vec![TreeVertex::root()]).expect("nonempty")
    }

    pub fn degree(&self) -> u32 {
        self.d
    }

    pub fn particles(&self) -> &[TreeVertex] {
        &self.particles
    }

    pub fn particle_count(&self) -> usize {
        self.particles.len()
    }

    pub fn contains(&self, v: &TreeVertex) -> bool {
        self.particles.binary_search(v).is_ok()
    }

    /// Vertices of the minimal subtree spanning the particles.
    pub fn steiner_vertices(&self) -> &[TreeVertex] {
        &self.steiner
    }

    pub fn active_edge_count(&self) -> usize {
        self.steiner.len() - 1
    }

    /// Number of pairs `(x, y)` with `x` a particle, `y` not, `x ~ y`.
    pub fn boundary_pair_count(&self) -> u64 {
        self.boundary_pairs
    }

    /// Number of particles adjacent to `x`.
    pub fn occupied_degree(&self, x: &TreeVertex) -> u32 {
        x.neighbors(self.d)
            .iter()
            .filter(|y| self.contains(y))
            .count() as u32
    }

    pub fn max_depth(&self) -> usize {
        self.particles.iter().map(TreeVertex::depth).max().unwrap_or(0)
    }

    /// All active edges, i.e. the edges of the Steiner tree.
    pub fn active_edges(&self) -> Vec<TreeEdge> {
        self.steiner[1..]
            .iter()
            .map(|v| TreeEdge { child: v.clone() })
            .collect()
    }

    pub fn is_active(&self, e: &TreeEdge) -> bool {
        // The topmost Steiner vertex has no parent inside the Steiner tree.
        self.steiner[1..].binary_search(&e.child).is_ok()
    }

    /// Every boundary pair, with multiplicity.
    pub fn boundary_pairs(&self) -> Vec<(TreeVertex, TreeVertex)> {
        let mut out = Vec::with_capacity(self.boundary_pairs as usize);
        for x in &self.particles {
            for y in x.neighbors(self.d) {
                if !self.contains(&y) {
                    out.push((x.clone(), y));
                }
            }
        }
        out
    }

    /// Uniform boundary pair, by rejection over (particle, slot).
    pub fn sample_boundary_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> (TreeVertex, TreeVertex) {
        loop {
            let x = &self.particles[rng.random_range(0..self.particles.len())];
            let y = x.neighbor_slot(rng.random_range(0..self.d), self.d);
            if !self.contains(&y) {
                return (x.clone(), y);
            }
        }
    }

    pub fn sample_particle<R: Rng + ?Sized>(&self, rng: &mut R) -> &TreeVertex {
        &self.particles[rng.random_range(0..self.particles.len())]
    }

    pub fn sample_active_edge<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<TreeEdge> {
        if self.steiner.len() < 2 {
            return None;
        }
        let i = rng.random_range(1..self.steiner.len());
        Some(TreeEdge {
            child: self.steiner[i].clone(),
        })
    }

    /// The shape with particle `x` removed, or `None` when nothing is left.
    pub fn without(&self, x: &TreeVertex) -> Option<HerdShape> {
        let rest: Vec<TreeVertex> = self.particles.iter().filter(|p| *p != x).cloned().collect();
        if rest.is_empty() {
            None
        } else {
            Some(Self::from_trusted(self.d, rest).expect("nonempty"))
        }
    }

    pub fn with(&self, y: TreeVertex) -> HerdShape {
        let mut ps = self.particles.clone();
        ps.push(y);
        Self::from_trusted(self.d, ps).expect("nonempty")
    }

    /// Splits along an active edge, returning (near side, far side) in the
    /// original embedding. The near side holds the particles closer to the
    /// edge's endpoint nearer the root.
    pub fn split_in_place(&self, e: &TreeEdge) -> Result<(HerdShape, HerdShape)> {
        if !self.is_active(e) {
            return Err(Error::InactiveEdge(e.child.to_string()));
        }
        let (far, near): (Vec<_>, Vec<_>) = self
            .particles
            .iter()
            .cloned()
            .partition(|p| p.is_descendant_of(&e.child));
        Ok((
            Self::from_trusted(self.d, near)?,
            Self::from_trusted(self.d, far)?,
        ))
    }

    /// Splits along an active edge and re-embeds both parts canonically.
    pub fn split(&self, e: &TreeEdge) -> Result<(HerdShape, HerdShape)> {
        let (a, b) = self.split_in_place(e)?;
        Ok((a.recentered(), b.recentered()))
    }

    /// Steiner tree as an abstract tree: adjacency lists over indices into
    /// [`steiner_vertices`](Self::steiner_vertices) and the occupancy marks.
    pub fn steiner_tree(&self) -> (Vec<Vec<usize>>, Vec<bool>) {
        let n = self.steiner.len();
        let mut adj = vec![Vec::new(); n];
        for (i, v) in self.steiner.iter().enumerate().skip(1) {
            let p = v.parent().expect("non-top steiner vertex has a parent");
            let j = self
                .steiner
                .binary_search(&p)
                .expect("steiner tree is closed under parents");
            adj[i].push(j);
            adj[j].push(i);
        }
        let marks = self.steiner.iter().map(|v| self.contains(v)).collect();
        (adj, marks)
    }

    pub fn canonical_code(&self) -> CanonicalShapeCode {
        let (adj, marks) = self.steiner_tree();
        canonical_code(&adj, &marks)
    }

    /// The canonical representative of this shape's automorphism orbit:
    /// the Steiner centroid sits at the root.
    pub fn recentered(&self) -> HerdShape {
        if self.particles.len() == 1 {
            return Self::singleton(self.d);
        }
        self.canonical_code()
            .to_shape(self.d)
            .expect("a Steiner tree always embeds in its own tree")
    }
}

/// Active edges of a shape.
pub fn active_edges(shape: &HerdShape) -> Vec<TreeEdge> {
    shape.active_edges()
}

/// Split a shape along an active edge; both parts come back re-embedded.
pub fn split_shape(shape: &HerdShape, e: &TreeEdge) -> Result<(HerdShape, HerdShape)> {
    shape.split(e)
}

/// Canonical form of a marked finite tree, invariant under automorphisms
/// of the ambient regular tree.
///
/// Encoding: a subtree is `OPEN_*` (occupied or empty), the sorted codes of
/// its children, then `CLOSE`. The root is the tree's centroid; with two
/// centroids the smaller of the two rootings is kept.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CanonicalShapeCode(Vec<u8>);

const OPEN_EMPTY: u8 = 1;
const OPEN_OCCUPIED: u8 = 2;
const CLOSE: u8 = 0;

impl fmt::Debug for CanonicalShapeCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Code({})", self.to_hex())
    }
}

impl Serialize for CanonicalShapeCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for CanonicalShapeCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Self::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

impl CanonicalShapeCode {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        if !s.len().is_multiple_of(2) {
            return Err(Error::BadCode("odd hex length".into()));
        }
        let bytes = (0..s.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&s[i..i + 2], 16))
            .collect::<std::result::Result<Vec<u8>, _>>()
            .map_err(|e| Error::BadCode(e.to_string()))?;
        let code = Self(bytes);
        code.parse()?;
        Ok(code)
    }

    /// Number of vertices of the encoded tree.
    pub fn vertex_count(&self) -> usize {
        self.0.iter().filter(|&&b| b != CLOSE).count()
    }

    pub fn particle_count(&self) -> usize {
        self.0.iter().filter(|&&b| b == OPEN_OCCUPIED).count()
    }

    /// Parses into (children lists, marks) with node 0 as the root.
    fn parse(&self) -> Result<(Vec<Vec<usize>>, Vec<bool>)> {
        let mut children: Vec<Vec<usize>> = Vec::new();
        let mut marks = Vec::new();
        let mut stack: Vec<usize> = Vec::new();
        let mut closed_root = false;
        for &b in &self.0 {
            if closed_root {
                return Err(Error::BadCode("trailing bytes".into()));
            }
            match b {
                OPEN_EMPTY | OPEN_OCCUPIED => {
                    let id = children.len();
                    children.push(Vec::new());
                    marks.push(b == OPEN_OCCUPIED);
                    if let Some(&p) = stack.last() {
                        children[p].push(id);
                    } else if id != 0 {
                        return Err(Error::BadCode("multiple roots".into()));
                    }
                    stack.push(id);
                }
                CLOSE => {
                    stack
                        .pop()
                        .ok_or_else(|| Error::BadCode("unbalanced close".into()))?;
                    if stack.is_empty() {
                        closed_root = true;
                    }
                }
                other => return Err(Error::BadCode(format!("unexpected byte {other}"))),
            }
        }
        if !closed_root {
            return Err(Error::BadCode("unterminated code".into()));
        }
        Ok((children, marks))
    }

    /// Embeds the encoded tree with its root at `o`, children taking the
    /// smallest free labels in code order.
    pub fn to_shape(&self, d: u32) -> Result<HerdShape> {
        let (children, marks) = self.parse()?;
        let mut addr: Vec<TreeVertex> = vec![TreeVertex::root(); children.len()];
        let mut particles = Vec::new();
        // Nodes are numbered in preorder, so parents precede children.
        for v in 0..children.len() {
            let limit = addr[v].child_count(d) as usize;
            if children[v].len() > limit {
                return Err(Error::BadCode(format!(
                    "vertex with {} children does not fit degree {d}",
                    children[v].len()
                )));
            }
            for (label, &c) in children[v].iter().enumerate() {
                addr[c] = addr[v].child(label as u8);
            }
            if marks[v] {
                particles.push(addr[v].clone());
            }
        }
        HerdShape::from_trusted(d, particles)
    }
}

/// Subtree sizes and parents for the tree rooted at node 0.
fn rooted_order(adj: &[Vec<usize>]) -> (Vec<usize>, Vec<usize>) {
    let n = adj.len();
    let mut parent = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![0usize];
    parent[0] = 0;
    while let Some(v) = stack.pop() {
        order.push(v);
        for &w in &adj[v] {
            if parent[w] == usize::MAX {
                parent[w] = v;
                stack.push(w);
            }
        }
    }
    (order, parent)
}

/// One or two centroids of a tree.
pub fn centroids(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    if n == 1 {
        return vec![0];
    }
    let (order, parent) = rooted_order(adj);
    let mut size = vec![1usize; n];
    for &v in order.iter().rev() {
        if v != 0 {
            size[parent[v]] += size[v];
        }
    }
    let mut best = usize::MAX;
    let mut out = Vec::new();
    for v in 0..n {
        let mut worst = n - size[v];
        for &w in &adj[v] {
            if w != 0 && parent[w] == v {
                worst = worst.max(size[w]);
            }
        }
        match worst.cmp(&best) {
            Ordering::Less => {
                best = worst;
                out.clear();
                out.push(v);
            }
            Ordering::Equal => out.push(v),
            Ordering::Greater => {}
        }
    }
    out
}

fn encode_rooted(adj: &[Vec<usize>], marks: &[bool], root: usize) -> Vec<u8> {
    // Post-order over an explicit stack to avoid deep recursion on paths.
    let n = adj.len();
    let mut parent = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![root];
    parent[root] = root;
    while let Some(v) = stack.pop() {
        order.push(v);
        for &w in &adj[v] {
            if parent[w] == usize::MAX {
                parent[w] = v;
                stack.push(w);
            }
        }
    }
    let mut codes: Vec<Option<Vec<u8>>> = vec![None; n];
    for &v in order.iter().rev() {
        let mut kids: Vec<Vec<u8>> = adj[v]
            .iter()
            .filter(|&&w| w != v && parent[w] == v)
            .map(|&w| codes[w].take().expect("children encoded first"))
            .collect();
        kids.sort_unstable();
        let len = 2 + kids.iter().map(Vec::len).sum::<usize>();
        let mut code = Vec::with_capacity(len);
        code.push(if marks[v] { OPEN_OCCUPIED } else { OPEN_EMPTY });
        for k in kids {
            code.extend_from_slice(&k);
        }
        code.push(CLOSE);
        codes[v] = Some(code);
    }
    codes[root].take().expect("root encoded")
}

/// Canonical code of a marked tree given as adjacency lists.
pub fn canonical_code(adj: &[Vec<usize>], marks: &[bool]) -> CanonicalShapeCode {
    assert!(!adj.is_empty(), "empty tree has no canonical code");
    let code = centroids(adj)
        .into_iter()
        .map(|c| encode_rooted(adj, marks, c))
        .min()
        .expect("at least one centroid");
    CanonicalShapeCode(code)
}

/// Canonical code of a herd shape.
pub fn canonicalize(shape: &HerdShape) -> CanonicalShapeCode {
    shape.canonical_code()
}

//! Coupling of two continuous-time Markov chains through a projection `psi`
//! from a good set of chain-1 states into chain-2 states.
//!
//! While coupled, chain 1 moves with its own rates and chain 2 follows
//! whenever the chain-1 class rate `r1(x, [y])` and the chain-2 rate
//! `r2(psi(x), psi(y))` agree; the excess on either side breaks the
//! coupling. Once broken the two chains run independently.

use std::collections::BTreeMap;
use std::fmt::Debug;

use rand::Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::contact::ContactParams;
use crate::error::{Error, Result};
use crate::exploration::ExploredState;
use crate::herds::HerdsParams;
use crate::seeding::par_replicas;
use crate::tree_shapes::CanonicalShapeCode;

const TOLERANCE: f64 = 1e-12;

/// The two chains, the good set, the projection and the error budget.
pub trait ChainSpec: Sync {
    type X: Clone + Send + Sync + Debug;
    type Y: Clone + Ord + Send + Sync + Debug;

    /// Outgoing chain-1 transitions with positive rate. A target may be
    /// listed more than once; rates of repeated entries add up.
    fn transitions1<R: Rng + ?Sized>(&self, x: &Self::X, rng: &mut R) -> Vec<(Self::X, f64)>;
    fn transitions2(&self, y: &Self::Y) -> Vec<(Self::Y, f64)>;
    fn is_good(&self, x: &Self::X) -> bool;
    /// Only called on good states.
    fn psi(&self, x: &Self::X) -> Self::Y;
    fn f(&self, x: &Self::X) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mover {
    Both,
    A,
    B,
}

#[derive(Debug, Clone)]
pub struct CoupledState<X, Y> {
    pub x: X,
    pub y: Y,
    pub coupled: bool,
    pub time: f64,
    pub sigma: Option<f64>,
}

impl<X: Clone, Y: Clone> CoupledState<X, Y> {
    pub fn start<S: ChainSpec<X = X, Y = Y>>(spec: &S, x0: X) -> Result<Self> {
        if !spec.is_good(&x0) {
            return Err(crate::error::invalid("x0", "coupling must start from a good state"));
        }
        let y = spec.psi(&x0);
        Ok(Self { x: x0, y, coupled: true, time: 0.0, sigma: None })
    }
}

/// One row of a coupler trace.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepInfo {
    pub time: f64,
    pub dt: f64,
    pub mover: Mover,
    pub broke: bool,
    /// `f(x)` before the step, if the state was coupled.
    pub f_x: Option<f64>,
    /// Total rate into the broken set before the step (zero once broken).
    pub break_rate: f64,
}

enum Move<Y> {
    A { target: usize, stay: bool },
    Both { target: usize },
    B { z: Y },
}

fn check_rate(r: f64, what: &str) -> Result<()> {
    if r.is_finite() && r >= -TOLERANCE {
        Ok(())
    } else {
        Err(Error::RateInconsistency(format!("{what} rate {r}")))
    }
}

fn aggregate<Y: Ord>(moves: Vec<(Y, f64)>) -> Result<BTreeMap<Y, f64>> {
    let mut out = BTreeMap::new();
    for (z, r) in moves {
        check_rate(r, "chain-2")?;
        *out.entry(z).or_insert(0.0) += r;
    }
    Ok(out)
}

/// Advances the coupled chain by one jump. `Ok(None)` when both chains are
/// absorbed.
pub fn coupled_step<S: ChainSpec, R: Rng + ?Sized>(
    spec: &S,
    st: &mut CoupledState<S::X, S::Y>,
    rng: &mut R,
) -> Result<Option<StepInfo>> {
    let t1 = spec.transitions1(&st.x, rng);
    for (_, r) in &t1 {
        check_rate(*r, "chain-1")?;
    }
    if !st.coupled {
        let t2 = spec.transitions2(&st.y);
        let r1: f64 = t1.iter().map(|m| m.1).sum();
        let r2: f64 = t2.iter().map(|m| m.1).sum();
        let total = r1 + r2;
        if total <= 0.0 {
            return Ok(None);
        }
        let dt = rng.sample::<f64, _>(Exp1) / total;
        st.time += dt;
        let mut u = rng.random::<f64>() * total;
        let mover = if u < r1 {
            st.x = pick(t1, &mut u);
            Mover::A
        } else {
            u -= r1;
            st.y = pick(t2, &mut u);
            Mover::B
        };
        return Ok(Some(StepInfo { time: st.time, dt, mover, broke: false, f_x: None, break_rate: 0.0 }));
    }

    let f_x = spec.f(&st.x);
    let good: Vec<Option<S::Y>> = t1.iter().map(|(y, _)| spec.is_good(y).then(|| spec.psi(y))).collect();
    let mut r1_class: BTreeMap<S::Y, f64> = BTreeMap::new();
    for ((_, r), z) in t1.iter().zip(&good) {
        if let Some(z) = z {
            if *z != st.y {
                *r1_class.entry(z.clone()).or_insert(0.0) += r;
            }
        }
    }
    let mut r2_class = aggregate(spec.transitions2(&st.y))?;
    r2_class.remove(&st.y);

    let mut moves: Vec<(f64, Move<S::Y>)> = Vec::with_capacity(2 * t1.len() + r2_class.len());
    let mut break_rate = 0.0;
    for (i, ((_, r), z)) in t1.iter().zip(&good).enumerate() {
        match z {
            None => {
                moves.push((*r, Move::A { target: i, stay: false }));
                break_rate += r;
            }
            Some(z) if *z == st.y => moves.push((*r, Move::A { target: i, stay: true })),
            Some(z) => {
                let class = r1_class[z];
                let matched = class.min(r2_class.get(z).copied().unwrap_or(0.0));
                let together = r * matched / class;
                let alone = r - together;
                check_rate(alone, "chain-1 residual")?;
                moves.push((together, Move::Both { target: i }));
                moves.push((alone.max(0.0), Move::A { target: i, stay: false }));
                break_rate += alone.max(0.0);
            }
        }
    }
    for (z, &r2) in &r2_class {
        let residual = r2 - r1_class.get(z).copied().unwrap_or(0.0).min(r2);
        check_rate(residual, "chain-2 residual")?;
        if residual > 0.0 {
            moves.push((residual, Move::B { z: z.clone() }));
            break_rate += residual;
        }
    }
    let total: f64 = moves.iter().map(|m| m.0).sum();
    if total <= 0.0 {
        return Ok(None);
    }
    let dt = rng.sample::<f64, _>(Exp1) / total;
    st.time += dt;
    let mut u = rng.random::<f64>() * total;
    let chosen = moves
        .into_iter()
        .find(|(r, _)| {
            if u < *r {
                true
            } else {
                u -= r;
                false
            }
        })
        .map(|m| m.1)
        .unwrap_or_else(|| Move::B { z: st.y.clone() });
    let mut targets = t1.into_iter().map(|m| m.0);
    let (mover, broke) = match chosen {
        Move::Both { target } => {
            st.x = targets.nth(target).expect("index in range");
            st.y = good[target].clone().expect("good target");
            (Mover::Both, false)
        }
        Move::A { target, stay } => {
            st.x = targets.nth(target).expect("index in range");
            (Mover::A, !stay)
        }
        Move::B { z } => {
            if z == st.y {
                // Rounding left a sliver of total rate; treat as a no-op.
                return Ok(Some(StepInfo { time: st.time, dt, mover: Mover::B, broke: false, f_x: Some(f_x), break_rate }));
            }
            st.y = z;
            (Mover::B, true)
        }
    };
    if broke {
        st.coupled = false;
        st.sigma = Some(st.time);
    } else {
        let image = spec.psi(&st.x);
        if image != st.y {
            return Err(Error::RateInconsistency(format!("coupled step left psi(x) = {image:?} != y = {:?}", st.y)));
        }
    }
    Ok(Some(StepInfo { time: st.time, dt, mover, broke, f_x: Some(f_x), break_rate }))
}

fn pick<T>(moves: Vec<(T, f64)>, u: &mut f64) -> T {
    let last = moves.len() - 1;
    for (i, (t, r)) in moves.into_iter().enumerate() {
        if *u < r || i == last {
            return t;
        }
        *u -= r;
    }
    unreachable!("non-empty move list")
}

/// A coupled run observed at fixed times.
#[derive(Debug, Clone)]
pub struct CoupledPath<X, Y> {
    pub sigma: Option<f64>,
    /// First time `f` of the chain-1 state exceeded the budget while coupled.
    pub t_a: Option<f64>,
    /// `(t, x, y, coupled)` at each requested time.
    pub samples: Vec<(f64, X, Y, bool)>,
    pub trace: Vec<StepInfo>,
}

/// Runs the coupled chain to `horizon`. With `stop_at_break`, the run ends
/// at the first break and later samples are omitted.
pub fn run_coupled_path<S: ChainSpec, R: Rng + ?Sized>(
    spec: &S,
    x0: S::X,
    horizon: f64,
    budget: f64,
    sample_times: &[f64],
    stop_at_break: bool,
    keep_trace: bool,
    rng: &mut R,
) -> Result<CoupledPath<S::X, S::Y>> {
    let mut st = CoupledState::start(spec, x0)?;
    let mut t_a = (spec.f(&st.x) > budget).then_some(0.0);
    let mut samples = Vec::with_capacity(sample_times.len());
    let mut pending = sample_times.iter().copied().filter(|&t| t <= horizon).peekable();
    let mut trace = Vec::new();
    loop {
        let before = st.clone();
        let info = coupled_step(spec, &mut st, rng)?;
        let t_next = info.map_or(f64::INFINITY, |i| i.time);
        while let Some(t) = pending.next_if(|&t| t < t_next) {
            samples.push((t, before.x.clone(), before.y.clone(), before.coupled));
        }
        let Some(info) = info else { break };
        if t_next > horizon {
            st = before;
            break;
        }
        if keep_trace {
            trace.push(info);
        }
        if st.coupled && t_a.is_none() && spec.f(&st.x) > budget {
            t_a = Some(st.time);
        }
        if info.broke && stop_at_break {
            break;
        }
    }
    if st.coupled || !stop_at_break {
        samples.extend(pending.map(|t| (t, st.x.clone(), st.y.clone(), st.coupled)));
    }
    Ok(CoupledPath { sigma: st.sigma, t_a, samples, trace })
}

/// Empirical `P(sigma <= t and sigma <= T_a)` against `2 a t`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BreakBoundRow {
    pub t: f64,
    pub p_hat: f64,
    pub se: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingReport {
    pub budget: f64,
    pub reps: u64,
    pub rows: Vec<BreakBoundRow>,
    pub sigma: Vec<Option<f64>>,
    pub t_a: Vec<Option<f64>>,
}

impl CouplingReport {
    pub fn all_hold(&self) -> bool {
        self.rows.iter().all(|r| r.holds)
    }
}

pub fn run_coupling<S: ChainSpec>(
    spec: &S,
    x0: &S::X,
    horizon: f64,
    budget: f64,
    grid: &[f64],
    reps: u64,
    seed: u64,
) -> Result<CouplingReport> {
    let paths = par_replicas(seed, reps, |_, rng| {
        run_coupled_path(spec, x0.clone(), horizon, budget, &[], true, false, rng).map(|p| (p.sigma, p.t_a))
    });
    let paths: Vec<(Option<f64>, Option<f64>)> = paths.into_iter().collect::<Result<_>>()?;
    let rows = grid
        .iter()
        .map(|&t| {
            let hits = paths
                .iter()
                .filter(|(s, ta)| s.is_some_and(|s| s <= t && ta.is_none_or(|ta| s <= ta)))
                .count() as f64;
            let p_hat = hits / reps as f64;
            let se = (p_hat * (1.0 - p_hat) / reps as f64).sqrt();
            let bound = 2.0 * budget * t;
            BreakBoundRow { t, p_hat, se, bound, holds: p_hat <= bound + 3.0 * se }
        })
        .collect();
    let (sigma, t_a) = paths.into_iter().unzip();
    Ok(CouplingReport { budget, reps, rows, sigma, t_a })
}

/// Both sides of the two hypotheses at one state, by full enumeration.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConditionReport {
    /// Rate of leaving the good set.
    pub leave_rate: f64,
    /// Total mismatch between chain-2 rates and chain-1 class rates.
    pub mismatch: f64,
    pub f: f64,
    /// Exact break rate, `leave_rate + mismatch`.
    pub break_rate: f64,
    pub holds: bool,
}

pub fn verify_coupling_conditions<S: ChainSpec, R: Rng + ?Sized>(spec: &S, x: &S::X, rng: &mut R) -> Result<ConditionReport> {
    let y = spec.psi(x);
    let mut leave_rate = 0.0;
    let mut r1_class: BTreeMap<S::Y, f64> = BTreeMap::new();
    for (target, r) in spec.transitions1(x, rng) {
        check_rate(r, "chain-1")?;
        if spec.is_good(&target) {
            let z = spec.psi(&target);
            if z != y {
                *r1_class.entry(z).or_insert(0.0) += r;
            }
        } else {
            leave_rate += r;
        }
    }
    let mut r2_class = aggregate(spec.transitions2(&y))?;
    r2_class.remove(&y);
    let mut mismatch = 0.0;
    for (z, r2) in &r2_class {
        mismatch += (r2 - r1_class.get(z).copied().unwrap_or(0.0)).abs();
    }
    for (z, r1) in &r1_class {
        if !r2_class.contains_key(z) {
            mismatch += r1;
        }
    }
    let f = spec.f(x);
    let slack = TOLERANCE * (1.0 + f);
    Ok(ConditionReport {
        leave_rate,
        mismatch,
        f,
        break_rate: leave_rate + mismatch,
        holds: leave_rate <= f + slack && mismatch <= f + slack,
    })
}

/// Finite chains given by explicit rate matrices.
#[derive(Debug, Clone, Serialize)]
pub struct ToyChains {
    pub r1: Vec<Vec<f64>>,
    pub r2: Vec<Vec<f64>>,
    pub good: Vec<bool>,
    /// Image of each chain-1 state; ignored for bad states.
    pub psi: Vec<usize>,
    pub f: Vec<f64>,
}

impl ToyChains {
    /// The same chain on both sides, identity projection, `f = 0`.
    pub fn identical(rates: Vec<Vec<f64>>) -> Self {
        let k = rates.len();
        Self { r1: rates.clone(), r2: rates, good: vec![true; k], psi: (0..k).collect(), f: vec![0.0; k] }
    }
}

fn row_moves(row: &[f64], from: usize) -> Vec<(usize, f64)> {
    row.iter()
        .enumerate()
        .filter(|&(j, &r)| j != from && r != 0.0)
        .map(|(j, &r)| (j, r))
        .collect()
}

impl ChainSpec for ToyChains {
    type X = usize;
    type Y = usize;

    fn transitions1<R: Rng + ?Sized>(&self, x: &usize, _rng: &mut R) -> Vec<(usize, f64)> {
        row_moves(&self.r1[*x], *x)
    }

    fn transitions2(&self, y: &usize) -> Vec<(usize, f64)> {
        row_moves(&self.r2[*y], *y)
    }

    fn is_good(&self, x: &usize) -> bool {
        self.good[*x]
    }

    fn psi(&self, x: &usize) -> usize {
        self.psi[*x]
    }

    fn f(&self, x: &usize) -> f64 {
        self.f[*x]
    }
}

/// Herds configurations modulo automorphisms: jumps of a multiset of
/// canonical codes, aggregated by target multiset.
pub fn herd_class_transitions(codes: &[CanonicalShapeCode], p: &HerdsParams) -> Vec<(Vec<CanonicalShapeCode>, f64)> {
    let mut out: BTreeMap<Vec<CanonicalShapeCode>, f64> = BTreeMap::new();
    let mut add = |i: usize, new: Vec<CanonicalShapeCode>, r: f64| {
        if r <= 0.0 {
            return;
        }
        let mut z: Vec<CanonicalShapeCode> = codes
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, c)| c.clone())
            .chain(new)
            .collect();
        z.sort_unstable();
        *out.entry(z).or_insert(0.0) += r;
    };
    for (i, code) in codes.iter().enumerate() {
        let shape = code.to_shape(p.d).expect("codes of herds fit their degree");
        for x in shape.particles() {
            add(i, shape.without(x).map(|s| s.canonical_code()).into_iter().collect(), 1.0);
        }
        for (_, y) in shape.boundary_pairs() {
            add(i, vec![shape.with(y).canonical_code()], p.lambda);
        }
        for e in shape.active_edges() {
            let (a, b) = shape.split_in_place(&e).expect("active edge");
            add(i, vec![a.canonical_code(), b.canonical_code()], p.v);
        }
    }
    out.into_iter().collect()
}

/// Exploration chain against the herds chain modulo automorphisms, with
/// `f = C_f (|A| + |E|)^2 / n`.
#[derive(Debug, Clone, Copy)]
pub struct ExplorationHerds {
    pub params: ContactParams,
    pub herds: HerdsParams,
    pub c_f: f64,
}

impl ExplorationHerds {
    pub fn new(params: ContactParams, c_f: f64) -> Result<Self> {
        let herds = HerdsParams::new(params.lambda, params.v, params.d)?;
        if !(c_f.is_finite() && c_f >= 0.0) {
            return Err(crate::error::invalid("c_f", "must be finite and nonnegative"));
        }
        Ok(Self { params, herds, c_f })
    }
}

impl ChainSpec for ExplorationHerds {
    type X = ExploredState;
    type Y = Vec<CanonicalShapeCode>;

    fn transitions1<R: Rng + ?Sized>(&self, x: &ExploredState, rng: &mut R) -> Vec<(ExploredState, f64)> {
        x.transitions(&self.params, rng)
    }

    fn transitions2(&self, y: &Self::Y) -> Vec<(Self::Y, f64)> {
        herd_class_transitions(y, &self.herds)
    }

    fn is_good(&self, x: &ExploredState) -> bool {
        x.is_forest()
    }

    fn psi(&self, x: &ExploredState) -> Self::Y {
        x.psi().expect("psi is only taken on forests")
    }

    fn f(&self, x: &ExploredState) -> f64 {
        x.f_bound(self.c_f)
    }
}

//! Monte Carlo estimators layered on the simulators: the growth index, the
//! critical birth rate, the derivative identities in `lambda` and `v`,
//! ordering tests, birth-count tails and extinction-time scaling.
//!
//! Every estimator is an orchestration of replica-parallel engine calls whose
//! seeds are derived from one master seed, so reports are replayable.

use rand::Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::contact::{extinction_all_infected, ContactParams};
use crate::error::{invalid, Result};
use crate::herds::{
    simulate, simulate_replicas, survival_probe, EventKind, HerdConfig, HerdsParams, HerdsRun, MonotonePair,
    NestedHerd, SimOptions, StopReason,
};
use crate::seeding::{derive_seed, par_replicas, replica_rng};
use crate::multitype::{simulate_typed, TypedConfig, TypedHerd};
use crate::stats::{
    dominance_gap, ks_two_sample, line_fit, quantile, weighted_line_fit, Estimate, KsResult, LineFit, MeanAcc,
};
use crate::tree_shapes::{HerdShape, TreeVertex};

const Z95: f64 = 1.96;
const JACKKNIFE_GROUPS: u64 = 20;

#[derive(Debug, Clone, Serialize)]
pub struct MomentPoint {
    pub t: f64,
    /// Monte Carlo mean of `X_t^p`.
    pub mean: f64,
    pub se: f64,
    /// Fraction of replicas alive at `t`.
    pub alive: f64,
    /// `mean^(1/t)`; an upper bound on `phi_p` up to noise.
    pub witness: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhiEstimate {
    pub lambda: f64,
    pub v: f64,
    pub d: u32,
    pub p: u32,
    pub reps: u64,
    pub seed: u64,
    pub points: Vec<MomentPoint>,
    /// Weighted least-squares slope of `log E[X_t^p]` against `t`.
    pub log_phi: Option<f64>,
    /// Grouped-jackknife standard error of the slope.
    pub log_phi_se: Option<f64>,
    pub phi: Option<f64>,
    /// 95% interval for `phi_p`.
    pub ci: Option<(f64, f64)>,
    /// Fitted intercept, the log of the constant in `E[X_t^p] <= C phi^t`.
    pub log_c: Option<f64>,
    /// Smallest grid witness.
    pub fekete: Option<f64>,
    /// Every witness lies above the lower end of the interval.
    pub fekete_consistent: bool,
    /// Largest excess of `log E[X_t^p]` over the fitted line, in standard errors.
    pub max_excess_z: Option<f64>,
    /// All replicas were extinct at the first grid time, or fewer than two
    /// grid points had a positive mean.
    pub degenerate: bool,
    pub warnings: Vec<String>,
}

impl PhiEstimate {
    pub fn ci_contains(&self, x: f64) -> bool {
        self.ci.is_some_and(|(lo, hi)| lo <= x && x <= hi)
    }

    /// `E[X_t] <= C phi^t` with one fitted `C`: no grid point sits more than
    /// three standard errors above the line.
    pub fn reverse_bound_holds(&self) -> bool {
        self.max_excess_z.is_some_and(|z| z <= 3.0)
    }

    /// Point estimate and interval of `phi_p^(1/p)`.
    pub fn root(&self) -> Option<(f64, f64, f64)> {
        let q = 1.0 / f64::from(self.p);
        let (lo, hi) = self.ci?;
        Some((self.phi?.powf(q), lo.powf(q), hi.powf(q)))
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(invalid("grid", "needs at least one time"));
    }
    if grid.iter().any(|t| !t.is_finite() || *t <= 0.0) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("grid", "times must be positive and strictly increasing"));
    }
    Ok(())
}

struct SlopeFit {
    log_phi: f64,
    log_c: f64,
}

fn fit_slope(grid: &[f64], means: &[f64], var_log: &[f64]) -> Option<SlopeFit> {
    let (mut x, mut y, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..grid.len() {
        if means[i] > 0.0 {
            x.push(grid[i]);
            y.push(means[i].ln());
            w.push(1.0 / var_log[i]);
        }
    }
    let f = weighted_line_fit(&x, &y, &w)?;
    Some(SlopeFit {
        log_phi: f.slope,
        log_c: f.intercept,
    })
}

/// Estimates `phi_p` from the decay or growth of `E[X_t^p]` over `grid`.
///
/// Replicas are shared across grid times, so the fit's model-based errors
/// are too small; the slope's standard error comes from a delete-one-group
/// jackknife over 20 contiguous replica groups instead.
pub fn estimate_phi(
    params: &HerdsParams,
    initial: &HerdConfig,
    p: u32,
    grid: &[f64],
    reps: u64,
    seed: u64,
) -> Result<PhiEstimate> {
    params.validate()?;
    check_grid(grid)?;
    if p == 0 {
        return Err(invalid("p", "moment order must be at least 1"));
    }
    if reps < 2 * JACKKNIFE_GROUPS {
        return Err(invalid("reps", format!("need at least {} replicas", 2 * JACKKNIFE_GROUPS)));
    }
    let horizon = *grid.last().expect("non-empty grid");
    let runs = simulate_replicas(initial, params, horizon, grid, &SimOptions::default(), reps, seed);
    let mut warnings = Vec::new();
    let incomplete = runs.iter().filter(|s| !s.complete(grid.len())).count();
    if incomplete > 0 {
        warnings.push(format!("{incomplete} replicas hit the event cap and were dropped"));
    }
    let rows: Vec<Vec<f64>> = runs
        .iter()
        .filter(|s| s.complete(grid.len()))
        .map(|s| s.samples.iter().map(|o| (o.x as f64).powi(p as i32)).collect())
        .collect();
    let used = rows.len() as u64;

    // Per-group sums give both the full means and the leave-one-out means.
    let g = JACKKNIFE_GROUPS;
    let mut group_sum = vec![vec![0.0; grid.len()]; g as usize];
    let mut group_n = vec![0u64; g as usize];
    let mut accs = vec![MeanAcc::new(); grid.len()];
    let mut alive = vec![0u64; grid.len()];
    for (r, row) in rows.iter().enumerate() {
        let k = (r as u64 * g / used) as usize;
        group_n[k] += 1;
        for (i, &x) in row.iter().enumerate() {
            group_sum[k][i] += x;
            accs[i].push(x);
            if x > 0.0 {
                alive[i] += 1;
            }
        }
    }
    let points: Vec<MomentPoint> = grid
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let mean = accs[i].mean();
            MomentPoint {
                t,
                mean,
                se: accs[i].se(),
                alive: alive[i] as f64 / used as f64,
                witness: (mean > 0.0).then(|| mean.powf(1.0 / t)),
            }
        })
        .collect();
    let means: Vec<f64> = points.iter().map(|q| q.mean).collect();
    // Relative variance floor for points whose sample variance vanished.
    let var_log: Vec<f64> = points
        .iter()
        .map(|q| (q.se / q.mean).powi(2).max(1.0 / (used as f64).powi(2)))
        .collect();

    let positive = means.iter().filter(|&&m| m > 0.0).count();
    let degenerate = means[0] == 0.0 || positive < 2;
    if means.contains(&0.0) && !degenerate {
        warnings.push("grid points with no surviving replica were left out of the fit".into());
    }
    let mut est = PhiEstimate {
        lambda: params.lambda,
        v: params.v,
        d: params.d,
        p,
        reps: used,
        seed,
        fekete: points.iter().filter_map(|q| q.witness).reduce(f64::min),
        points,
        log_phi: None,
        log_phi_se: None,
        phi: None,
        ci: None,
        log_c: None,
        fekete_consistent: false,
        max_excess_z: None,
        degenerate,
        warnings,
    };
    if degenerate {
        est.warnings.push("degenerate fit: too few grid points with a positive moment".into());
        return Ok(est);
    }
    let Some(full) = fit_slope(grid, &means, &var_log) else {
        est.degenerate = true;
        return Ok(est);
    };

    let mut loo = Vec::with_capacity(g as usize);
    for k in 0..g as usize {
        let n = (used - group_n[k]) as f64;
        let m: Vec<f64> = (0..grid.len())
            .map(|i| (accs[i].mean() * used as f64 - group_sum[k][i]) / n)
            .collect();
        if m.iter().zip(&means).all(|(a, b)| (*a > 0.0) == (*b > 0.0)) {
            if let Some(f) = fit_slope(grid, &m, &var_log) {
                loo.push(f.log_phi);
            }
        }
    }
    let se = if loo.len() as u64 == g {
        let bar = loo.iter().sum::<f64>() / g as f64;
        ((g - 1) as f64 / g as f64 * loo.iter().map(|s| (s - bar).powi(2)).sum::<f64>()).sqrt()
    } else {
        est.warnings.push("jackknife incomplete; standard error is infinite".into());
        f64::INFINITY
    };
    let lo = (full.log_phi - Z95 * se).exp();
    let hi = (full.log_phi + Z95 * se).exp();
    est.fekete_consistent = est
        .points
        .iter()
        .filter(|q| q.mean > 0.0)
        .all(|q| (q.mean + Z95 * q.se).powf(1.0 / q.t) >= lo);
    est.max_excess_z = est
        .points
        .iter()
        .zip(&var_log)
        .filter(|(q, _)| q.mean > 0.0)
        .map(|(q, v)| (q.mean.ln() - full.log_c - full.log_phi * q.t) / v.sqrt())
        .reduce(f64::max);
    let first = means[0];
    let last = means.iter().rev().copied().find(|&m| m > 0.0).unwrap_or(first);
    if (first / last).ln().abs() < 10f64.ln() {
        est.warnings.push("moment changes by less than a decade over the grid".into());
    }
    est.log_phi = Some(full.log_phi);
    est.log_phi_se = Some(se);
    est.phi = Some(full.log_phi.exp());
    est.ci = Some((lo, hi));
    est.log_c = Some(full.log_c);
    Ok(est)
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaBarConfig {
    pub v: f64,
    pub d: u32,
    pub tolerance: f64,
    /// Initial bracket.
    pub lo: f64,
    pub hi: f64,
    pub phi_grid: Vec<f64>,
    pub phi_reps: u64,
    /// Once the bracket is within tolerance, both endpoints are re-run with
    /// this many times `phi_reps` and pooled before the root is interpolated.
    pub refine_factor: u64,
    pub survival_time: f64,
    pub survival_reps: u64,
    /// Survival runs stop once this many particles are alive; such
    /// replicas count as survivors.
    pub particle_cap: u64,
    pub seed: u64,
}

impl LambdaBarConfig {
    pub fn new(v: f64, d: u32, seed: u64) -> Self {
        Self {
            v,
            d,
            tolerance: 0.02,
            lo: 1.0 / f64::from(d),
            hi: 0.5,
            phi_grid: (1..=10).map(|k| 2.0 * f64::from(k)).collect(),
            phi_reps: 40_000,
            refine_factor: 4,
            survival_time: 100.0,
            survival_reps: 10_000,
            particle_cap: 250,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Subcritical,
    Supercritical,
}

/// One bisection probe: both the growth-index and the survival reading.
#[derive(Debug, Clone, Serialize)]
pub struct Probe {
    pub index: u64,
    pub lambda: f64,
    pub log_phi: Option<f64>,
    pub log_phi_se: Option<f64>,
    pub phi_ci: Option<(f64, f64)>,
    pub survivors: u64,
    pub survival_reps: u64,
    pub survival_fraction: f64,
    pub capped: u64,
    /// The growth index came from the pilot run alone.
    pub pilot_only: bool,
    /// Extra replicas pooled into `log_phi` by the endpoint refinement.
    pub refined_reps: u64,
    pub verdict: Verdict,
    /// The survival probe does not contradict the growth index.
    pub agree: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LambdaBarEstimate {
    pub config: LambdaBarConfig,
    pub lo: f64,
    pub hi: f64,
    /// Zero of a line fitted to `log phi` over the probes near the final
    /// bracket, clamped into the bracket.
    pub estimate: f64,
    pub converged: bool,
    pub transcript: Vec<Probe>,
    pub warnings: Vec<String>,
}

impl LambdaBarEstimate {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

fn probe(cfg: &LambdaBarConfig, index: u64, lambda: f64) -> Result<Probe> {
    let params = HerdsParams::new(lambda, cfg.v, cfg.d)?;
    let init = HerdConfig::singleton(cfg.d);
    // A pilot with a tenth of the replicas settles points far from the
    // threshold; only ambiguous points pay for the full run.
    let pilot_reps = (cfg.phi_reps / 10).max(2 * JACKKNIFE_GROUPS);
    let pilot = estimate_phi(&params, &init, 1, &cfg.phi_grid, pilot_reps, derive_seed(cfg.seed, &[index, 2]))?;
    let pilot_only = match (pilot.log_phi, pilot.log_phi_se) {
        (Some(l), Some(se)) => l.abs() > 5.0 * se,
        _ => pilot.degenerate,
    };
    let phi = if pilot_only {
        pilot
    } else {
        estimate_phi(&params, &init, 1, &cfg.phi_grid, cfg.phi_reps, derive_seed(cfg.seed, &[index, 0]))?
    };
    let opts = SimOptions {
        particle_cap: Some(cfg.particle_cap),
        ..SimOptions::default()
    };
    let surv = survival_probe(
        &params,
        &init,
        cfg.survival_time,
        cfg.survival_reps,
        derive_seed(cfg.seed, &[index, 1]),
        &opts,
    );
    let verdict = match phi.log_phi {
        Some(s) if s > 0.0 => Verdict::Supercritical,
        _ => Verdict::Subcritical,
    };
    let (lp, se) = (phi.log_phi.unwrap_or(f64::NEG_INFINITY), phi.log_phi_se.unwrap_or(0.0));
    let clearly_super = lp - Z95 * se > 0.0;
    let clearly_sub = lp + Z95 * se < 0.0;
    let agree = !(clearly_super && surv.survivors == 0) && !(clearly_sub && surv.fraction > 0.05);
    Ok(Probe {
        index,
        lambda,
        log_phi: phi.log_phi,
        log_phi_se: phi.log_phi_se,
        phi_ci: phi.ci,
        survivors: surv.survivors,
        survival_reps: surv.reps,
        survival_fraction: surv.fraction,
        capped: surv.capped,
        pilot_only,
        refined_reps: 0,
        verdict,
        agree,
    })
}

/// Brackets the critical birth rate by bisection on the sign of the fitted
/// `log phi`, with the survival probe run at every point as a cross-check.
/// A disagreement between the two stops the bisection and leaves the
/// bracket wider than the tolerance, with a warning.
pub fn estimate_lambda_bar(cfg: &LambdaBarConfig) -> Result<LambdaBarEstimate> {
    if !(cfg.tolerance > 0.0) {
        return Err(invalid("tolerance", "must be positive"));
    }
    if !(cfg.lo < cfg.hi) {
        return Err(invalid("lo", "initial bracket must satisfy lo < hi"));
    }
    HerdsParams::new(cfg.lo, cfg.v, cfg.d)?;
    let mut transcript = vec![probe(cfg, 0, cfg.lo)?, probe(cfg, 1, cfg.hi)?];
    let mut warnings = Vec::new();
    let (mut lo, mut hi) = (cfg.lo, cfg.hi);
    let mut converged = true;
    if transcript[0].verdict != Verdict::Subcritical || transcript[1].verdict != Verdict::Supercritical {
        warnings.push("initial bracket does not straddle the threshold".into());
        converged = false;
    }
    if transcript.iter().any(|p| !p.agree) {
        warnings.push("growth index and survival probe disagree at a bracket endpoint".into());
        converged = false;
    }
    while converged && hi - lo > cfg.tolerance {
        let mid = 0.5 * (lo + hi);
        let pr = probe(cfg, transcript.len() as u64, mid)?;
        let (agree, verdict) = (pr.agree, pr.verdict);
        transcript.push(pr);
        if !agree {
            warnings.push(format!("probes disagree at lambda = {mid}; bracket left wide"));
            converged = false;
            break;
        }
        match verdict {
            Verdict::Subcritical => lo = mid,
            Verdict::Supercritical => hi = mid,
        }
    }
    if converged && cfg.refine_factor > 0 {
        refine_endpoints(cfg, &mut transcript, lo, hi)?;
    }
    let estimate = interpolate_root(&transcript, lo, hi, cfg.tolerance);
    Ok(LambdaBarEstimate {
        config: cfg.clone(),
        lo,
        hi,
        estimate,
        converged,
        transcript,
        warnings,
    })
}

// The interpolated root inherits the noise of the two endpoint readings, which
// is as large as that of a fresh reading at the root, so tightening them is
// what makes the estimate usable as a threshold.
fn refine_endpoints(cfg: &LambdaBarConfig, transcript: &mut [Probe], lo: f64, hi: f64) -> Result<()> {
    let reps = cfg.phi_reps * cfg.refine_factor;
    let init = HerdConfig::singleton(cfg.d);
    for p in transcript.iter_mut().filter(|p| p.lambda == lo || p.lambda == hi) {
        let (Some(l0), Some(s0)) = (p.log_phi, p.log_phi_se) else { continue };
        let params = HerdsParams::new(p.lambda, cfg.v, cfg.d)?;
        let extra = estimate_phi(&params, &init, 1, &cfg.phi_grid, reps, derive_seed(cfg.seed, &[p.index, 3]))?;
        let (Some(l1), Some(s1)) = (extra.log_phi, extra.log_phi_se) else { continue };
        if !(s0 > 0.0 && s1 > 0.0) {
            continue;
        }
        let (w0, w1) = (s0.powi(-2), s1.powi(-2));
        let (l, se) = ((w0 * l0 + w1 * l1) / (w0 + w1), (w0 + w1).sqrt().recip());
        p.log_phi = Some(l);
        p.log_phi_se = Some(se);
        p.phi_ci = Some(((l - Z95 * se).exp(), (l + Z95 * se).exp()));
        p.refined_reps = reps;
    }
    Ok(())
}

fn interpolate_root(transcript: &[Probe], lo: f64, hi: f64, tol: f64) -> f64 {
    let near: Vec<&Probe> = transcript
        .iter()
        .filter(|p| p.lambda >= lo - 2.0 * tol && p.lambda <= hi + 2.0 * tol)
        .filter(|p| p.log_phi.is_some() && p.log_phi_se.is_some_and(|s| s > 0.0 && s.is_finite()))
        .collect();
    let x: Vec<f64> = near.iter().map(|p| p.lambda).collect();
    let y: Vec<f64> = near.iter().map(|p| p.log_phi.unwrap()).collect();
    let w: Vec<f64> = near.iter().map(|p| p.log_phi_se.unwrap().powi(-2)).collect();
    match weighted_line_fit(&x, &y, &w) {
        Some(f) if f.slope > 0.0 => (-f.intercept / f.slope).clamp(lo, hi),
        _ => 0.5 * (lo + hi),
    }
}

/// Runs the process at two parameter points from one driving noise. Births
/// and splits are proposed at the larger of the two rates and each copy keeps
/// a proposal with probability its own rate over the larger one; the copies
/// coincide until the first proposal that only one of them keeps.
fn thinned_pair<R: Rng + ?Sized>(
    initial: &HerdConfig,
    a: &HerdsParams,
    b: &HerdsParams,
    horizon: f64,
    rng: &mut R,
) -> (u64, u64) {
    let top = HerdsParams {
        lambda: a.lambda.max(b.lambda),
        v: a.v.max(b.v),
        d: a.d,
    };
    let mut config = initial.clone();
    let mut time = 0.0;
    loop {
        let rates = config.rates(&top);
        if rates.total <= 0.0 {
            return (0, 0);
        }
        time += rng.sample::<f64, _>(Exp1) / rates.total;
        if time > horizon {
            let x = config.particle_count();
            return (x, x);
        }
        let r = rng.random::<f64>() * rates.total;
        let (kind, ra, rb, rt) = if r < rates.death {
            (EventKind::Death, 1.0, 1.0, 1.0)
        } else if r < rates.death + rates.birth {
            (EventKind::Birth, a.lambda, b.lambda, top.lambda)
        } else {
            (EventKind::Split, a.v, b.v, top.v)
        };
        let u = rng.random::<f64>() * rt;
        match (u < ra, u < rb) {
            (true, true) => {
                config.apply_kind(kind, rng);
            }
            (false, false) => {}
            (keep_a, _) => {
                let mut other = config.clone();
                if keep_a {
                    config.apply_kind(kind, rng);
                } else {
                    other.apply_kind(kind, rng);
                }
                let xa = finish(config, a, time, horizon, rng);
                let xb = finish(other, b, time, horizon, rng);
                return (xa, xb);
            }
        }
    }
}

fn finish<R: Rng + ?Sized>(config: HerdConfig, p: &HerdsParams, from: f64, horizon: f64, rng: &mut R) -> u64 {
    let mut run = HerdsRun::new(config, *p);
    run.time = from;
    run.advance(horizon, &SimOptions::default(), rng);
    run.config.particle_count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Direction {
    /// Derivative in the split rate `v`, through `g_v`.
    V,
    /// Derivative in the birth rate `lambda`, through `h_lambda`.
    Lambda,
}

/// `E[X_s | xi']` minus `E[X_s | xi]` for one perturbation of one herd,
/// sampled once under common random numbers.
fn perturbation_gain<R: Rng + ?Sized>(
    dir: Direction,
    shape: &HerdShape,
    xi_edge_or_site: Perturb,
    params: &HerdsParams,
    s: f64,
    rng: &mut R,
) -> f64 {
    let d = params.d;
    match (dir, xi_edge_or_site) {
        (Direction::V, Perturb::Split(a1, a2)) => {
            if s == 0.0 {
                return 0.0;
            }
            let seed = rng.random::<u64>();
            let opts = SimOptions::default();
            let split = HerdConfig::from_shapes(d, vec![a1, a2]);
            let whole = HerdConfig::from_shapes(d, vec![shape.clone()]);
            let xs = simulate(&split, params, s, &[s], &opts, &mut replica_rng(seed, 0)).samples[0].x;
            let xw = simulate(&whole, params, s, &[s], &opts, &mut replica_rng(seed, 0)).samples[0].x;
            xs as f64 - xw as f64
        }
        (Direction::Lambda, Perturb::Add(y)) => {
            if s == 0.0 {
                return 1.0;
            }
            let mut pair = MonotonePair::new(
                d,
                vec![NestedHerd {
                    outer: shape.with(y),
                    inner: shape.particles().to_vec(),
                }],
            )
            .expect("A is inside A + y");
            pair.run_for(params, s, rng);
            (pair.outer_config().particle_count() - pair.inner_config().particle_count()) as f64
        }
        _ => unreachable!("perturbation matches direction"),
    }
}

enum Perturb {
    Split(HerdShape, HerdShape),
    Add(TreeVertex),
}

/// Unbiased one-sample estimate of `g_v(xi, s)` or `h_lambda(xi, s)`: one
/// active edge (boundary pair) drawn uniformly, weighted by their number.
fn sampled_kernel<R: Rng + ?Sized>(dir: Direction, xi: &HerdConfig, params: &HerdsParams, s: f64, rng: &mut R) -> f64 {
    match dir {
        Direction::V => {
            let Some((i, e)) = xi.sample_active_edge(rng) else {
                return 0.0;
            };
            let a = &xi.herds()[i];
            let (a1, a2) = a.split(&e).expect("sampled edge is active");
            xi.active_edge_count() as f64 * perturbation_gain(dir, a, Perturb::Split(a1, a2), params, s, rng)
        }
        Direction::Lambda => {
            let Some((i, _, y)) = xi.sample_boundary_pair(rng) else {
                return 0.0;
            };
            xi.boundary_pair_count() as f64
                * perturbation_gain(dir, &xi.herds()[i], Perturb::Add(y), params, s, rng)
        }
    }
}

fn kernel_exact_sum(
    dir: Direction,
    xi: &HerdConfig,
    params: &HerdsParams,
    s: f64,
    reps: u64,
    seed: u64,
) -> Result<Estimate> {
    params.validate()?;
    if !(s >= 0.0) {
        return Err(invalid("t", "must be >= 0"));
    }
    let mut terms: Vec<(HerdShape, Perturb)> = Vec::new();
    for a in xi.herds() {
        match dir {
            Direction::V => {
                for e in a.active_edges() {
                    let (a1, a2) = a.split(&e)?;
                    terms.push((a.clone(), Perturb::Split(a1, a2)));
                }
            }
            Direction::Lambda => {
                for (_, y) in a.boundary_pairs() {
                    terms.push((a.clone(), Perturb::Add(y)));
                }
            }
        }
    }
    if terms.is_empty() || (s == 0.0 && dir == Direction::V) {
        return Ok(Estimate::exact(0.0));
    }
    if s == 0.0 {
        return Ok(Estimate::exact(terms.len() as f64));
    }
    let mut mean = 0.0;
    let mut var = 0.0;
    let mut n = 0;
    for (k, (a, pert)) in terms.into_iter().enumerate() {
        let pert = &pert;
        let acc: MeanAcc = par_replicas(derive_seed(seed, &[k as u64]), reps, |_, rng| {
            let pert = match pert {
                Perturb::Split(a1, a2) => Perturb::Split(a1.clone(), a2.clone()),
                Perturb::Add(y) => Perturb::Add(y.clone()),
            };
            perturbation_gain(dir, &a, pert, params, s, rng)
        })
        .into_iter()
        .collect();
        mean += acc.mean();
        var += acc.se().powi(2);
        n += acc.count();
    }
    Ok(Estimate { mean, se: var.sqrt(), n })
}

/// `g_v(xi, t)`: over every herd `A` and active edge `e`, the expected gain
/// in `X_t` from splitting `A` at `e`. Each term is a nested Monte Carlo
/// difference under common random numbers; standard errors add in
/// quadrature.
pub fn g_v_estimate(xi: &HerdConfig, t: f64, params: &HerdsParams, reps: u64, seed: u64) -> Result<Estimate> {
    kernel_exact_sum(Direction::V, xi, params, t, reps, seed)
}

/// `h_lambda(xi, t)`: over every herd `A` and boundary pair `(x, y)`, the
/// expected gain in `X_t` from adding `y` to `A`, sampled under the
/// attractive coupling of `A` and `A + y`.
pub fn h_lambda_estimate(xi: &HerdConfig, t: f64, params: &HerdsParams, reps: u64, seed: u64) -> Result<Estimate> {
    kernel_exact_sum(Direction::Lambda, xi, params, t, reps, seed)
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeConfig {
    pub direction: Direction,
    pub params: HerdsParams,
    pub horizon: f64,
    /// Finite-difference step.
    pub eps: f64,
    pub fd_reps: u64,
    pub formula_reps: u64,
    /// Coarse trapezoid intervals; the fine rule uses `2k`.
    pub k: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeCheck {
    pub config: DerivativeConfig,
    /// `E[X_T]` at the two finite-difference points.
    pub fd_points: (f64, f64),
    pub finite_difference: Estimate,
    /// Trapezoid rule with `2k` intervals.
    pub formula: Estimate,
    /// Trapezoid rule with `k` intervals on the same trajectories.
    pub formula_coarse: Estimate,
    pub richardson: f64,
    /// Fine minus coarse, with its paired standard error.
    pub richardson_gap: Estimate,
    pub richardson_ok: bool,
    /// The two 95% intervals intersect.
    pub overlap: bool,
}

/// Compares a finite difference of `E[X_T]` with the integral identity
/// `d/dtheta E[X_T] = int_0^T E[k(Xi_t, T - t)] dt`, `k` being `g_v` or
/// `h_lambda`.
///
/// The finite difference is central, `theta +- eps`, except that it becomes
/// one-sided when `theta < eps`; both points are driven by one noise (see
/// `thinned_pair`). The integral uses a uniform grid of `2k + 1` points
/// along each outer trajectory, with one sampled perturbation per point.
pub fn derivative_check(cfg: &DerivativeConfig) -> Result<DerivativeCheck> {
    cfg.params.validate()?;
    if !(cfg.horizon >= 0.0 && cfg.horizon.is_finite()) {
        return Err(invalid("horizon", "must be finite and >= 0"));
    }
    if !(cfg.eps > 0.0) {
        return Err(invalid("eps", "must be positive"));
    }
    if cfg.k < 20 {
        return Err(invalid("k", format!("need at least 20 trapezoid intervals, got {}", cfg.k)));
    }
    if cfg.fd_reps < 2 || cfg.formula_reps < 2 {
        return Err(invalid("reps", "need at least 2 replicas"));
    }
    let p = cfg.params;
    let init = HerdConfig::singleton(p.d);
    let t_end = cfg.horizon;
    if t_end == 0.0 {
        let zero = Estimate::exact(0.0);
        return Ok(DerivativeCheck {
            config: cfg.clone(),
            fd_points: (1.0, 1.0),
            finite_difference: zero,
            formula: zero,
            formula_coarse: zero,
            richardson: 0.0,
            richardson_gap: zero,
            richardson_ok: true,
            overlap: true,
        });
    }

    let theta = match cfg.direction {
        Direction::V => p.v,
        Direction::Lambda => p.lambda,
    };
    let (lo, hi) = ((theta - cfg.eps).max(0.0), theta + cfg.eps);
    let at = |x: f64| match cfg.direction {
        Direction::V => HerdsParams { v: x, ..p },
        Direction::Lambda => HerdsParams { lambda: x, ..p },
    };
    let (pl, ph) = (at(lo), at(hi));
    let fd_runs = par_replicas(derive_seed(cfg.seed, &[0]), cfg.fd_reps, |_, rng| {
        thinned_pair(&init, &pl, &ph, t_end, rng)
    });
    let fd: MeanAcc = fd_runs.iter().map(|&(a, b)| (b as f64 - a as f64) / (hi - lo)).collect();
    let m_lo = fd_runs.iter().map(|r| r.0 as f64).sum::<f64>() / cfg.fd_reps as f64;
    let m_hi = fd_runs.iter().map(|r| r.1 as f64).sum::<f64>() / cfg.fd_reps as f64;

    let n = 2 * cfg.k as usize;
    let h = t_end / n as f64;
    let outer = par_replicas(derive_seed(cfg.seed, &[1]), cfg.formula_reps, |_, rng| {
        let mut run = HerdsRun::new(init.clone(), p);
        let mut vals = Vec::with_capacity(n + 1);
        for j in 0..=n {
            let t = j as f64 * h;
            run.advance(t, &SimOptions::default(), rng);
            vals.push(sampled_kernel(cfg.direction, &run.config, &p, t_end - t, rng));
        }
        let fine = h * (vals.iter().sum::<f64>() - 0.5 * (vals[0] + vals[n]));
        let coarse = 2.0 * h * (vals.iter().step_by(2).sum::<f64>() - 0.5 * (vals[0] + vals[n]));
        (fine, coarse)
    });
    let fine: MeanAcc = outer.iter().map(|r| r.0).collect();
    let coarse: MeanAcc = outer.iter().map(|r| r.1).collect();
    let gap: MeanAcc = outer.iter().map(|r| r.0 - r.1).collect();
    let (fd, fine, coarse, gap) = (fd.estimate(), fine.estimate(), coarse.estimate(), gap.estimate());
    let overlap = (fd.mean - fine.mean).abs() <= Z95 * (fd.se + fine.se);
    Ok(DerivativeCheck {
        config: cfg.clone(),
        fd_points: (m_lo, m_hi),
        finite_difference: fd,
        formula: fine,
        formula_coarse: coarse,
        richardson: (4.0 * fine.mean - coarse.mean) / 3.0,
        richardson_gap: gap,
        richardson_ok: gap.mean.abs() <= 3.0 * gap.se || gap.mean == 0.0,
        overlap,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderTest {
    /// (lambda, v) of the smaller and the larger parameter point.
    pub from: (f64, f64),
    pub to: (f64, f64),
    /// `log phi(to) - log phi(from)`.
    pub diff: f64,
    pub se: f64,
    pub z: f64,
    /// One-sided: `z > 1.96`, the increase exceeds the combined 95% margin.
    pub increasing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonotonicityReport {
    pub d: u32,
    pub lambdas: Vec<f64>,
    pub vs: Vec<f64>,
    /// `cells[i][j]` is the estimate at `(lambdas[i], vs[j])`.
    pub cells: Vec<Vec<PhiEstimate>>,
    pub lambda_tests: Vec<OrderTest>,
    pub v_tests: Vec<OrderTest>,
}

impl MonotonicityReport {
    pub fn all_increasing(&self) -> bool {
        self.lambda_tests.iter().chain(&self.v_tests).all(|t| t.increasing)
    }
}

fn order_test(a: &PhiEstimate, b: &PhiEstimate) -> OrderTest {
    let (la, lb) = (a.log_phi.unwrap_or(f64::NEG_INFINITY), b.log_phi.unwrap_or(f64::NEG_INFINITY));
    let se = a.log_phi_se.unwrap_or(f64::INFINITY).hypot(b.log_phi_se.unwrap_or(f64::INFINITY));
    let diff = lb - la;
    let z = if diff.is_finite() && se > 0.0 { diff / se } else { f64::NAN };
    OrderTest {
        from: (a.lambda, a.v),
        to: (b.lambda, b.v),
        diff,
        se,
        z,
        increasing: z > Z95,
    }
}

/// Growth-index estimates over a `lambda x v` grid with a one-sided test for
/// every adjacent pair along each axis. Grids are sorted increasingly first.
pub fn monotonicity_report(
    d: u32,
    lambdas: &[f64],
    vs: &[f64],
    grid: &[f64],
    reps: u64,
    seed: u64,
) -> Result<MonotonicityReport> {
    let mut lambdas = lambdas.to_vec();
    let mut vs = vs.to_vec();
    lambdas.sort_by(f64::total_cmp);
    vs.sort_by(f64::total_cmp);
    if lambdas.is_empty() || vs.is_empty() {
        return Err(invalid("grid", "parameter grids must be non-empty"));
    }
    let mut cells = Vec::with_capacity(lambdas.len());
    for (i, &l) in lambdas.iter().enumerate() {
        let mut row = Vec::with_capacity(vs.len());
        for (j, &v) in vs.iter().enumerate() {
            let p = HerdsParams::new(l, v, d)?;
            row.push(estimate_phi(&p, &HerdConfig::singleton(d), 1, grid, reps, derive_seed(seed, &[i as u64, j as u64]))?);
        }
        cells.push(row);
    }
    let mut lambda_tests = Vec::new();
    let mut v_tests = Vec::new();
    for i in 0..lambdas.len() {
        for j in 0..vs.len() {
            if i + 1 < lambdas.len() {
                lambda_tests.push(order_test(&cells[i][j], &cells[i + 1][j]));
            }
            if j + 1 < vs.len() {
                v_tests.push(order_test(&cells[i][j], &cells[i][j + 1]));
            }
        }
    }
    Ok(MonotonicityReport {
        d,
        lambdas,
        vs,
        cells,
        lambda_tests,
        v_tests,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TailMoment {
    pub p: u32,
    pub mean: f64,
    pub se: f64,
    /// Same moment from the first half of the replicas.
    pub half_mean: f64,
    /// `|mean - half_mean| / mean`.
    pub drift: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingCheck {
    /// Particles of the initial herd (a path).
    pub x0: u64,
    pub mean: f64,
    pub se: f64,
    /// `x0 * E[N | X_0 = 1]`, inflated by three combined relative errors.
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BirthTail {
    pub params: HerdsParams,
    pub horizon: f64,
    pub reps: u64,
    pub seed: u64,
    pub moments: Vec<TailMoment>,
    pub scaling: Vec<ScalingCheck>,
    /// Replicas still alive at the horizon, over all initial sizes.
    pub censored: u64,
    pub warnings: Vec<String>,
}

/// A herd of `k` particles on a path through the root.
pub fn path_herd(d: u32, k: usize) -> Result<HerdShape> {
    let mut v = TreeVertex::root();
    let mut pts = Vec::with_capacity(k);
    for _ in 0..k {
        pts.push(v.clone());
        v = v.child(0);
    }
    HerdShape::new(d, pts)
}

/// Moments of the total number of births `N_inf` of a subcritical herds
/// process, with the initial-size scaling check `E[N | X_0 = k] <= k E[N]`.
pub fn birth_count_tail(params: &HerdsParams, horizon: f64, reps: u64, seed: u64) -> Result<BirthTail> {
    params.validate()?;
    if reps < 2 {
        return Err(invalid("reps", "need at least 2 replicas"));
    }
    let mut censored = 0;
    let mut per_size = Vec::new();
    for (k, x0) in [1usize, 2, 4].into_iter().enumerate() {
        let init = HerdConfig::from_shapes(params.d, vec![path_herd(params.d, x0)?]);
        let runs = simulate_replicas(&init, params, horizon, &[], &SimOptions::default(), reps, derive_seed(seed, &[k as u64]));
        censored += runs.iter().filter(|r| r.stop != StopReason::Extinct).count() as u64;
        per_size.push(runs.iter().map(|r| r.births as f64).collect::<Vec<_>>());
    }
    let births = &per_size[0];
    let moments = [1u32, 2, 4]
        .into_iter()
        .map(|p| {
            let acc: MeanAcc = births.iter().map(|b| b.powi(p as i32)).collect();
            let half: MeanAcc = births[..births.len() / 2].iter().map(|b| b.powi(p as i32)).collect();
            let drift = if acc.mean() > 0.0 { (acc.mean() - half.mean()).abs() / acc.mean() } else { 0.0 };
            TailMoment {
                p,
                mean: acc.mean(),
                se: acc.se(),
                half_mean: half.mean(),
                drift,
            }
        })
        .collect();
    let one: MeanAcc = births.iter().copied().collect();
    let rel1 = if one.mean() > 0.0 { one.se() / one.mean() } else { 0.0 };
    let scaling = [1u64, 2, 4]
        .into_iter()
        .zip(&per_size)
        .map(|(x0, b)| {
            let acc: MeanAcc = b.iter().copied().collect();
            let rel = if acc.mean() > 0.0 { acc.se() / acc.mean() } else { 0.0 };
            let bound = x0 as f64 * one.mean() * (1.0 + 3.0 * rel.hypot(rel1));
            ScalingCheck {
                x0,
                mean: acc.mean(),
                se: acc.se(),
                bound,
                holds: acc.mean() <= bound,
            }
        })
        .collect();
    let mut warnings = Vec::new();
    if censored as f64 > 0.001 * (3 * reps) as f64 {
        warnings.push(format!(
            "{censored} replicas still alive at the horizon; the subcriticality assumption is suspect"
        ));
    }
    Ok(BirthTail {
        params: *params,
        horizon,
        reps,
        seed,
        moments,
        scaling,
        censored,
        warnings,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingRow {
    pub n: u32,
    pub reps: u64,
    pub median: f64,
    pub p95: f64,
    /// Replicas still infected at the horizon; their time enters as the horizon.
    pub censored: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub d: u32,
    pub lambda: f64,
    pub v: f64,
    pub horizon: f64,
    pub seed: u64,
    pub rows: Vec<ScalingRow>,
    /// Median extinction time against `ln n`.
    pub fit: Option<LineFit>,
    /// Largest `|residual| / median` of that fit.
    pub max_rel_residual: Option<f64>,
}

impl ScalingReport {
    pub fn censored_fraction(&self, n: u32) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.n == n)
            .map(|r| r.censored as f64 / r.reps as f64)
    }
}

/// Extinction time from the all-infected start on the dynamic graph, for
/// each graph size in `ns`.
pub fn extinction_scaling(
    d: u32,
    lambda: f64,
    v: f64,
    ns: &[u32],
    reps: u64,
    horizon: f64,
    seed: u64,
    event_cap: u64,
) -> Result<ScalingReport> {
    if ns.is_empty() {
        return Err(invalid("n", "need at least one graph size"));
    }
    let mut rows = Vec::with_capacity(ns.len());
    for (k, &n) in ns.iter().enumerate() {
        let params = ContactParams::new(n, d, lambda, v)?;
        let samples = extinction_all_infected(&params, horizon, reps, derive_seed(seed, &[k as u64]), event_cap)?;
        let taus: Vec<f64> = samples.iter().map(|s| s.tau).collect();
        rows.push(ScalingRow {
            n,
            reps,
            median: quantile(&taus, 0.5),
            p95: quantile(&taus, 0.95),
            censored: samples.iter().filter(|s| s.censored).count() as u64,
        });
    }
    let x: Vec<f64> = rows.iter().map(|r| f64::from(r.n).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.median).collect();
    let fit = line_fit(&x, &y);
    let max_rel_residual = fit.map(|f| {
        x.iter()
            .zip(&y)
            .map(|(x, y)| (y - f.intercept - f.slope * x).abs() / y)
            .fold(0.0, f64::max)
    });
    Ok(ScalingReport {
        d,
        lambda,
        v,
        horizon,
        seed,
        rows,
        fit,
        max_rel_residual,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SubmultRow {
    pub p: u32,
    pub s: f64,
    pub t: f64,
    /// `E[X_{s+t}^p]`.
    pub joint: Estimate,
    pub factor_s: Estimate,
    pub factor_t: Estimate,
    /// `joint - factor_s * factor_t`.
    pub excess: f64,
    /// Delta-method SE of the excess; the three batches are independent.
    pub se: f64,
    pub holds: bool,
}

fn moment_table(params: &HerdsParams, initial: &HerdConfig, times: &[f64], ps: &[u32], reps: u64, seed: u64) -> Vec<Vec<Estimate>> {
    let horizon = *times.last().expect("non-empty times");
    let runs = simulate_replicas(initial, params, horizon, times, &SimOptions::default(), reps, seed);
    ps.iter()
        .map(|&p| {
            (0..times.len())
                .map(|i| {
                    runs.iter()
                        .map(|s| (s.samples[i].x as f64).powi(p as i32))
                        .collect::<MeanAcc>()
                        .estimate()
                })
                .collect()
        })
        .collect()
}

/// Checks `E[X_{s+t}^p] <= E[X_s^p] E[X_t^p]` for every `p` and every pair
/// drawn from `times`. The left side and the two factors come from three
/// independent batches of `reps` replicas, so their errors add in quadrature.
pub fn submultiplicativity(
    params: &HerdsParams,
    initial: &HerdConfig,
    ps: &[u32],
    times: &[f64],
    reps: u64,
    seed: u64,
) -> Result<Vec<SubmultRow>> {
    params.validate()?;
    check_grid(times)?;
    if ps.is_empty() || ps.contains(&0) {
        return Err(invalid("p", "moment orders must be at least 1"));
    }
    if reps < 2 {
        return Err(invalid("reps", "need at least two replicas"));
    }
    let mut sums: Vec<f64> = times.iter().flat_map(|s| times.iter().map(move |t| s + t)).collect();
    sums.sort_by(f64::total_cmp);
    sums.dedup();
    let joint = moment_table(params, initial, &sums, ps, reps, derive_seed(seed, &[0]));
    let left = moment_table(params, initial, times, ps, reps, derive_seed(seed, &[1]));
    let right = moment_table(params, initial, times, ps, reps, derive_seed(seed, &[2]));
    let mut rows = Vec::new();
    for (k, &p) in ps.iter().enumerate() {
        for (i, &s) in times.iter().enumerate() {
            for (j, &t) in times.iter().enumerate() {
                let at = sums.iter().position(|&u| u == s + t).expect("sum on grid");
                let (a, b, c) = (joint[k][at], left[k][i], right[k][j]);
                let excess = a.mean - b.mean * c.mean;
                let se = (a.se.powi(2) + (b.se * c.mean).powi(2) + (c.se * b.mean).powi(2)).sqrt();
                rows.push(SubmultRow {
                    p,
                    s,
                    t,
                    joint: a,
                    factor_s: b,
                    factor_t: c,
                    excess,
                    se,
                    holds: excess <= 3.0 * se,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionCheck {
    pub t: f64,
    pub reps: u64,
    /// Type-1 marginal of the two-type run against a direct run from `A`.
    pub ks: KsResult,
    /// Largest excess of the union's CDF over the direct `A ∪ B` run's CDF.
    pub dominance_excess: f64,
    pub dominance_crit: f64,
    /// Union count never above the sum of the type counts.
    pub pathwise_ok: bool,
}

impl ProjectionCheck {
    pub fn passes(&self, alpha: f64) -> bool {
        self.ks.passes(alpha) && self.dominance_excess <= self.dominance_crit && self.pathwise_ok
    }
}

/// Compares the projections of a two-type process started from the disjoint
/// sets `a` (type 1) and `b` (type 2) with direct runs: the type-1 count
/// against `delta_A`, and the union count as a dominating copy of
/// `delta_{A ∪ B}`.
pub fn projection_check(
    params: &HerdsParams,
    a: &[TreeVertex],
    b: &[TreeVertex],
    t: f64,
    reps: u64,
    alpha: f64,
    seed: u64,
) -> Result<ProjectionCheck> {
    params.validate()?;
    if !(t > 0.0) {
        return Err(invalid("t", "must be positive"));
    }
    let d = params.d;
    let init = TypedConfig::new(d, 2, vec![TypedHerd::new(d, vec![a.to_vec(), b.to_vec()])?])?;
    let typed = par_replicas(derive_seed(seed, &[0]), reps, |_, rng| {
        let o = &simulate_typed(&init, params, &[t], rng)[0];
        (o.per_type[0], o.per_type[1], o.union)
    });
    let direct = |shape: Vec<TreeVertex>, k: u64| -> Result<Vec<f64>> {
        let init = HerdConfig::from_shapes(d, vec![HerdShape::new(d, shape)?]);
        Ok(simulate_replicas(&init, params, t, &[t], &SimOptions::default(), reps, derive_seed(seed, &[k]))
            .iter()
            .map(|s| s.samples[0].x as f64)
            .collect())
    };
    let from_a = direct(a.to_vec(), 1)?;
    let merged = direct([a, b].concat(), 2)?;
    let x1: Vec<f64> = typed.iter().map(|r| r.0 as f64).collect();
    let union: Vec<f64> = typed.iter().map(|r| r.2 as f64).collect();
    let (dominance_excess, dominance_crit) = dominance_gap(&merged, &union, alpha);
    Ok(ProjectionCheck {
        t,
        reps,
        ks: ks_two_sample(&x1, &from_a),
        dominance_excess,
        dominance_crit,
        pathwise_ok: typed.iter().all(|r| r.2 <= r.0 + r.1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_rejects_bad_inputs() {
        let p = HerdsParams::new(0.3, 1.0, 3).unwrap();
        let one = HerdConfig::singleton(3);
        assert!(estimate_phi(&p, &one, 1, &[], 100, 0).is_err());
        assert!(estimate_phi(&p, &one, 1, &[1.0, 1.0], 100, 0).is_err());
        assert!(estimate_phi(&p, &one, 0, &[1.0], 100, 0).is_err());
        assert!(estimate_phi(&p, &one, 1, &[1.0, 2.0], 10, 0).is_err());
    }

    #[test]
    fn phi_flags_extinct_grid() {
        let p = HerdsParams::new(0.0, 1.0, 3).unwrap();
        let est = estimate_phi(&p, &HerdConfig::singleton(3), 1, &[60.0, 80.0], 100, 1).unwrap();
        assert!(est.degenerate);
        assert!(est.phi.is_none());
    }

    #[test]
    fn kernels_vanish_where_they_must() {
        let p = HerdsParams::new(0.5, 1.0, 3).unwrap();
        let singles = HerdConfig::from_shapes(3, vec![HerdShape::singleton(3), HerdShape::singleton(3)]);
        assert_eq!(g_v_estimate(&singles, 1.0, &p, 10, 0).unwrap(), Estimate::exact(0.0));
        let pair = HerdConfig::from_shapes(3, vec![path_herd(3, 2).unwrap()]);
        assert_eq!(g_v_estimate(&pair, 0.0, &p, 10, 0).unwrap(), Estimate::exact(0.0));
        // At t = 0 each boundary pair adds exactly one particle.
        assert_eq!(h_lambda_estimate(&pair, 0.0, &p, 10, 0).unwrap(), Estimate::exact(4.0));
    }

    #[test]
    fn thinned_pair_agrees_when_parameters_coincide() {
        let p = HerdsParams::new(0.5, 1.0, 3).unwrap();
        let mut rng = replica_rng(3, 0);
        for _ in 0..200 {
            let (a, b) = thinned_pair(&HerdConfig::singleton(3), &p, &p, 2.0, &mut rng);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn thinned_pair_is_ordered_in_lambda_at_zero_split_rate() {
        // Without splitting a single herd only grows with lambda, and the
        // coupled copies separate at a birth the smaller one rejects.
        let lo = HerdsParams::new(0.3, 0.0, 3).unwrap();
        let hi = HerdsParams::new(0.6, 0.0, 3).unwrap();
        let runs = par_replicas(4, 2_000, |_, rng| thinned_pair(&HerdConfig::singleton(3), &lo, &hi, 1.0, rng));
        let diff: MeanAcc = runs.iter().map(|&(a, b)| b as f64 - a as f64).collect();
        assert!(diff.mean() > 0.0);
    }

    #[test]
    fn derivative_check_validates_and_handles_zero_horizon() {
        let p = HerdsParams::new(0.5, 1.0, 3).unwrap();
        let mut cfg = DerivativeConfig {
            direction: Direction::V,
            params: p,
            horizon: 0.0,
            eps: 0.1,
            fd_reps: 10,
            formula_reps: 10,
            k: 20,
            seed: 1,
        };
        let r = derivative_check(&cfg).unwrap();
        assert_eq!(r.finite_difference, Estimate::exact(0.0));
        assert_eq!(r.formula, Estimate::exact(0.0));
        cfg.k = 5;
        assert!(derivative_check(&cfg).is_err());
    }

    #[test]
    fn path_herds_have_expected_size() {
        for k in 1..5 {
            let h = path_herd(3, k).unwrap();
            assert_eq!(h.particle_count(), k);
            assert_eq!(h.active_edge_count(), k - 1);
        }
    }
}

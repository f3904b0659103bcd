//! Subcommands. Each one validates its own arguments, runs with seeds
//! derived from the master seed, and returns rows, a result and its checks.

use anyhow::Result;
use clap::{Args, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use herds_core::contact::{duality_gap, extinction_all_infected, simulate_contact, ContactParams};
use herds_core::coupling::{coupled_step, run_coupling, CoupledState, ExplorationHerds, Mover, ToyChains};
use herds_core::estimators::{
    birth_count_tail, derivative_check, estimate_lambda_bar, estimate_phi, extinction_scaling, monotonicity_report,
    projection_check, submultiplicativity, DerivativeConfig, Direction, LambdaBarConfig,
};
use herds_core::exploration::{default_c_f, simulate_exploration, ExploredState};
use herds_core::graph::{graph_step, Edge, HalfEdge, HalfEdgeMatching};
use herds_core::herds::{
    replica_rows, simulate_replicas, simulate_with_pure_birth, HerdConfig, HerdsParams, SimOptions,
};
use herds_core::seeding::{derive_seed, par_replicas};
use herds_core::stats::{chi_square_gof, ks_two_sample, quantile, Estimate, MeanAcc};
use herds_core::tree_shapes::TreeVertex;

use crate::output::{reject, Outcome};

const ALPHA: f64 = 0.01;

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Experiment {
    /// Herds process from one particle: extinction time, E[X_t], and the
    /// pathwise pure-birth bound N_t <= Z_t - Z_0.
    #[command(allow_negative_numbers = true)]
    HerdsSim(HerdsSimArgs),
    /// Two-type herds process: the type-1 projection against a direct run
    /// and the union projection against a run from the merged start.
    #[command(allow_negative_numbers = true)]
    MultitypeSim(MultitypeArgs),
    /// Switching chain on perfect matchings: loop count after mixing from a
    /// loop-heavy start, against its value under the uniform law.
    #[command(allow_negative_numbers = true)]
    GraphSim(GraphArgs),
    /// Contact process on the dynamic graph: extinction time from all
    /// infected, or the duality gap P(A reaches B) - P(B reaches A).
    #[command(allow_negative_numbers = true)]
    ContactSim(ContactArgs),
    /// Exploration process: law of the infected count against direct runs
    /// on a fully sampled graph.
    #[command(allow_negative_numbers = true)]
    ExploreSim(ExploreArgs),
    /// Coupled chains: break probability P(sigma <= t, sigma <= T_a)
    /// against 2at.
    #[command(allow_negative_numbers = true)]
    Couple(CoupleArgs),
    /// Growth index phi_p = lim E[X_t^p]^(1/t), with Fekete and
    /// reverse-bound diagnostics and an optional product-rule table.
    #[command(allow_negative_numbers = true)]
    Phi(PhiArgs),
    /// Critical birth rate lambda-bar(v) by bisection on log phi, then phi
    /// at the estimate.
    #[command(allow_negative_numbers = true)]
    LambdaBar(LambdaBarArgs),
    /// d/dv or d/dlambda of E[X_T]: finite difference against the
    /// integral identity.
    #[command(allow_negative_numbers = true)]
    DerivativeCheck(DerivativeArgs),
    /// Growth index on a (lambda, v) grid, tested for strict increase along
    /// both axes.
    #[command(allow_negative_numbers = true)]
    Monotonicity(MonotonicityArgs),
    /// Extinction time from all infected against ln n.
    #[command(allow_negative_numbers = true)]
    Scaling(ScalingArgs),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Self::HerdsSim(_) => "herds-sim",
            Self::MultitypeSim(_) => "multitype-sim",
            Self::GraphSim(_) => "graph-sim",
            Self::ContactSim(_) => "contact-sim",
            Self::ExploreSim(_) => "explore-sim",
            Self::Couple(_) => "couple",
            Self::Phi(_) => "phi",
            Self::LambdaBar(_) => "lambda-bar",
            Self::DerivativeCheck(_) => "derivative-check",
            Self::Monotonicity(_) => "monotonicity",
            Self::Scaling(_) => "scaling",
        }
    }

    /// The quantity estimated and the check it feeds, for the report.
    pub fn describe(&self) -> (&'static str, &'static str) {
        match self {
            Self::HerdsSim(_) => (
                "extinction time and E[X_t] of the herds process from one particle",
                "pure-death anchor (mean extinction time 1 at lambda = 0); pure-birth domination",
            ),
            Self::MultitypeSim(_) => (
                "laws of the type-1 and union projections of a two-type herds process",
                "projection laws: KS for the type-1 marginal, CDF ordering for the union",
            ),
            Self::GraphSim(_) => (
                "mean loop count of the switching chain at the horizon",
                "uniform stationary law of the switching chain",
            ),
            Self::ContactSim(_) => (
                "extinction time from all infected, or the duality gap",
                "duality z-statistic |gap| / SE <= 3",
            ),
            Self::ExploreSim(_) => (
                "law of |infected| under the exploration process",
                "exploration fidelity: two-sample KS against full-graph runs",
            ),
            Self::Couple(_) => (
                "break probability of the coupled chains",
                "coupling bound P(sigma <= t and T_a) <= 2at within 3 SE",
            ),
            Self::Phi(_) => (
                "growth index phi_p",
                "pure-death anchor phi = 1/e; product rule E[X_{s+t}^p] <= E[X_s^p] E[X_t^p]",
            ),
            Self::LambdaBar(_) => (
                "critical birth rate lambda-bar(v)",
                "floor lambda-bar >= 1/d; phi = 1 at the estimate; ordering in v",
            ),
            Self::DerivativeCheck(_) => (
                "d/dv E[X_T] or d/dlambda E[X_T]",
                "finite difference and integral identity overlap at 95%",
            ),
            Self::Monotonicity(_) => (
                "growth index on a (lambda, v) grid",
                "strict increase of phi in both arguments",
            ),
            Self::Scaling(_) => (
                "extinction time of the dynamic-graph contact process against n",
                "logarithmic growth below threshold; survival to the horizon above it",
            ),
        }
    }

    pub fn run(&self, seed: u64) -> Result<Outcome> {
        match self {
            Self::HerdsSim(a) => a.run(seed),
            Self::MultitypeSim(a) => a.run(seed),
            Self::GraphSim(a) => a.run(seed),
            Self::ContactSim(a) => a.run(seed),
            Self::ExploreSim(a) => a.run(seed),
            Self::Couple(a) => a.run(seed),
            Self::Phi(a) => a.run(seed),
            Self::LambdaBar(a) => a.run(seed),
            Self::DerivativeCheck(a) => a.run(seed),
            Self::Monotonicity(a) => a.run(seed),
            Self::Scaling(a) => a.run(seed),
        }
    }
}

fn model(d: u32, lambda: f64, v: f64) -> Result<HerdsParams> {
    if d < 3 {
        return Err(reject("d", format!("must be at least 3, got {d}")));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(reject("lambda", format!("must be finite and >= 0, got {lambda}")));
    }
    if !v.is_finite() || v < 0.0 {
        return Err(reject("v", format!("must be finite and >= 0, got {v}")));
    }
    Ok(HerdsParams::new(lambda, v, d)?)
}

fn graph_model(n: u32, d: u32, lambda: f64, v: f64) -> Result<ContactParams> {
    model(d, lambda, v)?;
    if n == 0 {
        return Err(reject("n", "must be positive"));
    }
    if (u64::from(n) * u64::from(d)) % 2 == 1 {
        return Err(reject("n", format!("n*d = {} is odd; the graph needs an even number of half-edges", n * d)));
    }
    Ok(ContactParams::new(n, d, lambda, v)?)
}

fn positive(field: &str, x: f64) -> Result<f64> {
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(reject(field, format!("must be finite and positive, got {x}")))
    }
}

fn count(field: &str, k: u64, min: u64) -> Result<u64> {
    if k >= min {
        Ok(k)
    } else {
        Err(reject(field, format!("must be at least {min}, got {k}")))
    }
}

fn times(field: &str, ts: &[f64]) -> Result<Vec<f64>> {
    if ts.is_empty() {
        return Err(reject(field, "needs at least one value"));
    }
    if ts.iter().any(|t| !t.is_finite() || *t <= 0.0) || ts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(reject(field, "values must be positive and strictly increasing"));
    }
    Ok(ts.to_vec())
}

fn vertices(field: &str, vs: &[u32], n: u32) -> Result<Vec<u32>> {
    if vs.is_empty() {
        return Err(reject(field, "needs at least one vertex"));
    }
    if let Some(u) = vs.iter().find(|&&u| u >= n) {
        return Err(reject(field, format!("vertex {u} is outside 0..{n}")));
    }
    Ok(vs.to_vec())
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Estimate {
    xs.into_iter().collect::<MeanAcc>().estimate()
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HerdsSimArgs {
    #[arg(long, default_value_t = 3)]
    pub d: u32,
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub v: f64,
    #[arg(long, default_value_t = 1000)]
    pub reps: u64,
    #[arg(long, default_value_t = 10.0)]
    pub horizon: f64,
    /// Sample times, comma separated; defaults to the horizon.
    #[arg(long, value_delimiter = ',')]
    pub samples: Vec<f64>,
    #[arg(long, default_value_t = 10_000_000)]
    pub event_cap: u64,
    /// Stop a replica once it holds more particles than this.
    #[arg(long)]
    pub particle_cap: Option<u64>,
    /// Also estimate moments of the birth count to the horizon from small
    /// path herds.
    #[arg(long)]
    pub birth_tail: bool,
}

#[derive(Serialize)]
struct SampleSummary {
    t: f64,
    mean_x: Estimate,
    alive: f64,
}

impl HerdsSimArgs {
    fn run(&self, seed: u64) -> Result<Outcome> {
        let params = model(self.d, self.lambda, self.v)?;
        let reps = count("reps", self.reps, 2)?;
        let horizon = positive("horizon", self.horizon)?;
        let samples = if self.samples.is_empty() { vec![horizon] } else { times("samples", &self.samples)? };
        if samples.last().is_some_and(|&t| t > horizon) {
            return Err(reject("samples", "sample times must not exceed the horizon"));
        }
        let init = HerdConfig::singleton(self.d);
        let opts = SimOptions {
            event_cap: count("event_cap", self.event_cap, 1)?,
            particle_cap: self.particle_cap,
        };
        let runs = simulate_replicas(&init, &params, horizon, &samples, &opts, reps, derive_seed(seed, &[0]));
        let censored = runs.iter().filter(|s| s.extinction_time.is_none()).count() as u64;
        let extinction = mean(runs.iter().filter_map(|s| s.extinction_time));
        let summaries: Vec<SampleSummary> = samples
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let xs: Vec<f64> = runs.iter().filter_map(|s| s.samples.get(i)).map(|o| o.x as f64).collect();
                let alive = xs.iter().filter(|&&x| x > 0.0).count() as f64 / xs.len().max(1) as f64;
                SampleSummary { t, mean_x: mean(xs), alive }
            })
            .collect();

        let pure = par_replicas(derive_seed(seed, &[1]), reps, |_, rng| {
            simulate_with_pure_birth(&init, &params, horizon, rng)
        });
        let violations: u64 = pure.iter().map(|r| r.violations).sum();
        let tail = self
            .birth_tail
            .then(|| birth_count_tail(&params, horizon, reps, derive_seed(seed, &[2])))
            .transpose()?;

        let pure_death = (self.lambda == 0.0).then(|| extinction.contains(1.0, 3.0) && censored == 0);
        let result = serde_json::json!({
            "params": params,
            "reps": reps,
            "horizon": horizon,
            "extinction_time": extinction,
            "censored": censored,
            "samples": summaries,
            "pure_birth": {
                "replicas": reps,
                "violations": violations,
                "mean_births": mean(pure.iter().map(|r| r.births as f64)),
                "mean_z_increase": mean(pure.iter().map(|r| r.z_increase as f64)),
            },
            "birth_tail": tail,
        });
        let mut out = Outcome::new(&replica_rows(&params, &runs), &result)?.check("pure_birth_domination", violations == 0);
        if let Some(ok) = pure_death {
            out = out.check("pure_death_mean_extinction_time", ok);
        }
        if let Some(t) = &tail {
            out = out.check("birth_tail_scaling", t.scaling.iter().all(|s| s.holds));
        }
        Ok(out)
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultitypeArgs {
    #[arg(long, default_value_t = 3)]
    pub d: u32,
    #[arg(long, default_value_t = 0.45)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub v: f64,
    #[arg(long, default_value_t = 10_000)]
    pub reps: u64,
    #[arg(long, default_value_t = 2.0)]
    pub t: f64,
    /// Type-1 set: a path of this many vertices down child 1 from the root.
    #[arg(long, default_value_t = 2)]
    pub a_size: usize,
    /// Type-2 set: a path of this many vertices down child 0 from the
    /// root's child 0.
    #[arg(long, default_value_t = 2)]
    pub b_size: usize,
}

#[derive(Serialize)]
struct StatRow {
    statistic: String,
    value: f64,
    threshold: f64,
    passed: bool,
}

fn path_from(start: TreeVertex, label: u8, k: usize) -> Vec<TreeVertex> {
    std::iter::successors(Some(start), |x| Some(x.child(label))).take(k).collect()
}

impl MultitypeArgs {
    fn run(&self, seed: u64) -> Result<Outcome> {
        let params = model(self.d, self.lambda, self.v)?;
        let reps = count("reps", self.reps, 2)?;
        let t = positive("t", self.t)?;
        count("a_size", self.a_size as u64, 1)?;
        count("b_size", self.b_size as u64, 1)?;
        let a = path_from(TreeVertex::root(), 1, self.a_size);
        let b = path_from(TreeVertex::root().child(0), 0, self.b_size);
        let c = projection_check(&params, &a, &b, t, reps, ALPHA, seed)?;
        let rows = [
            StatRow {
                statistic: "ks_p_value".into(),
                value: c.ks.p_value,
                threshold: ALPHA,
                passed: c.ks.passes(ALPHA),
            },
            StatRow {
                statistic: "dominance_excess".into(),
                value: c.dominance_excess,
                threshold: c.dominance_crit,
                passed: c.dominance_excess <= c.dominance_crit,
            },
        ];
        let result = serde_json::json!({
            "params": params,
            "a": a.iter().map(ToString::to_string).collect::<Vec<_>>(),
            "b": b.iter().map(ToString::to_string).collect::<Vec<_>>(),
            "check": c,
        });
        Ok(Outcome::new(&rows, &result)?
            .check("type1_marginal_ks", rows[0].passed)
            .check("union_dominates_merged_start", rows[1].passed)
            .check("union_at_most_type_sum", c.pathwise_ok))
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphArgs {
    #[arg(long, default_value_t = 100)]
    pub n: u32,
    #[arg(long, default_value_t = 3)]
    pub d: u32,
    #[arg(long, default_value_t = 1.0)]
    pub v: f64,
    #[arg(long, default_value_t = 20.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 2000)]
    pub reps: u64,
}

#[derive(Serialize)]
struct GraphRow {
    replica: u64,
    switches: u64,
    loops: u64,
    parallel_pairs: u64,
}

/// Pairs half-edge `2k` with `2k + 1`: every vertex starts with loops.
fn consecutive_matching(n: u32, d: u32) -> Result<HalfEdgeMatching> {
    let edges: Vec<Edge> = (0..n * d / 2).map(|k| Edge::new(HalfEdge(2 * k), HalfEdge(2 * k + 1))).collect();
    Ok(HalfEdgeMatching::from_edges(n, d, &edges)?)
}

fn loops_and_parallels(g: &HalfEdgeMatching) -> (u64, u64) {
    let d = g.d();
    let mut pairs: Vec<(u32, u32)> = g
        .edges()
        .iter()
        .filter(|e| !e.is_loop(d))
        .map(|e| (e.lo.vertex(d), e.hi.vertex(d)))
        .map(|(a, b)| (a.min(b), a.max(b)))
        .collect();
    pairs.sort_unstable();
    let parallel = pairs.windows(2).filter(|w| w[0] == w[1]).count() as u64;
    let loops = g.edges().iter().filter(|e| e.is_loop(d)).count() as u64;
    (loops, parallel)
}

impl GraphArgs {
    fn run(&self, seed: u64) -> Result<Outcome> {
        graph_model(self.n, self.d, 0.0, self.v)?;
        let reps = count("reps", self.reps, 2)?;
        let horizon = positive("horizon", self.horizon)?;
        let start = consecutive_matching(self.n, self.d)?;
        let rows = par_replicas(seed, reps, |r, rng| {
            let mut g = start.clone();
            let (mut t, mut switches) = (0.0, 0u64);
            while let Some((dt, _)) = graph_step(&mut g, self.v, rng) {
                t += dt;
                if t > horizon {
                    break;
                }
                switches += 1;
            }
            let (loops, parallel_pairs) = loops_and_parallels(&g);
            GraphRow { replica: r, switches, loops, parallel_pairs }
        });
        let (n, d) = (f64::from(self.n), f64::from(self.d));
        // Each of the n C(d,2) same-vertex pairs is matched with
        // probability 1/(nd - 1) under the uniform matching.
        let exact = n * d * (d - 1.0) / 2.0 / (n * d - 1.0);
        let loops = mean(rows.iter().map(|r| r.loops as f64));
        let result = serde_json::json!({
            "n": self.n,
            "d": self.d,
            "v": self.v,
            "horizon": horizon,
            "reps": reps,
            "initial_loops": loops_and_parallels(&start).0,
            "mean_loops": loops,
            "uniform_mean_loops": exact,
            "mean_parallel_pairs": mean(rows.iter().map(|r| r.parallel_pairs as f64)),
            "mean_switches": mean(rows.iter().map(|r| r.switches as f64)),
        });
        Ok(Outcome::new(&rows, &result)?.check("loop_count_matches_uniform_law", loops.contains(exact, 3.0)))
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactArgs {
    #[arg(long, default_value_t = 100)]
    pub n: u32,
    #[arg(long, default_value_t = 3)]
    pub d: u32,
    #[arg(long, default_value_t = 0.2)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub v: f64,
    #[arg(long, default_value_t = 500)]
    pub reps: u64,
    #[arg(long, default_value_t = 10_000.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1_000_000_000)]
    pub event_cap: u64,
    /// Estimate P(A reaches B by t) and P(B reaches A by t) instead.
    #[arg(long)]
    pub duality: bool,
    /// Vertex set A (0-based), comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [0])]
    pub a: Vec<u32>,
    /// Vertex set B (0-based), comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1])]
    pub b: Vec<u32>,
    #[arg(long, default_value_t = 2.0)]
    pub t: f64,
}

#[derive(Serialize)]
struct HitRow {
    direction: &'static str,
    mean: f64,
    se: f64,
    reps: u64,
}

impl ContactArgs {
    fn run(&self, seed: u64) -> Result<Outcome> {
        let params = graph_model(self.n, self.d, self.lambda, self.v)?;
        let reps = count("reps", self.reps, 2)?;
        if self.duality {
            let a = vertices("a", &self.a, self.n)?;
            let b = vertices("b", &self.b, self.n)?;
            let t = positive("t", self.t)?;
            let gap = duality_gap(&params, &a, &b, t, reps, seed)?;
            let rows = [
                HitRow { direction: "a_to_b", mean: gap.p1.mean, se: gap.p1.se, reps },
                HitRow { direction: "b_to_a", mean: gap.p2.mean, se: gap.p2.se, reps },
            ];
            let result = serde_json::json!({ "params": params, "a": a, "b": b, "t": t, "gap": gap });
            return Ok(Outcome::new(&rows, &result)?.check("duality_z_within_3", gap.z.abs() <= 3.0));
        }
        let horizon = positive("horizon", self.horizon)?;
        let samples = extinction_all_infected(&params, horizon, reps, seed, count("event_cap", self.event_cap, 1)?)?;
        let taus: Vec<f64> = samples.iter().map(|s| s.tau).collect();
        let result = serde_json::json!({
            "params": params,
            "reps": reps,
            "horizon": horizon,
            "median": quantile(&taus, 0.5),
            "p95": quantile(&taus, 0.95),
            "censored": samples.iter().filter(|s| s.censored).count(),
        });
        Outcome::new(&samples, &result)
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExploreArgs {
    #[arg(long, default_value_t = 50)]
    pub n: u32,
    #[arg(long, default_value_t = 3)]
    pub d: u32,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub v: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [2.0, 5.0])]
    pub times: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub reps: u64,
}

#[derive(Serialize)]
struct ExploreRow {
    replica: u64,
    t: f64,
    explored_infected: usize,
    revealed_edges: usize,
    forest: bool,
    full_graph_infected: usize,
}

#[derive(Serialize)]
struct KsAtTime {
    t: f64,
    statistic: f64,
    p_value: f64,
    forest_fraction: f64,
}

impl ExploreArgs {
    fn run(&self, seed: u64) -> Result<Outcome> {
        let params = graph_model(self.n, self.d, self.lambda, self.v)?;
        let reps = count("reps", self.reps, 2)?;
        let ts = times("times", &self.times)?;
        let horizon = *ts.last().expect("non-empty");
        let explored = par_replicas(derive_seed(seed, &[0]), reps, |_, rng| {
            simulate_exploration(&params, 0, horizon, &ts, rng).expect("validated").samples
        });
        let direct = par_replicas(derive_seed(seed, &[1]), reps, |_, rng| {
            simulate_contact(&params, &[0], horizon, &ts, u64::MAX, rng).expect("validated").samples
        });
        let mut rows = Vec::new();
        for (r, (e, f)) in explored.iter().zip(&direct).enumerate() {
            for (s, g) in e.iter().zip(f) {
                rows.push(ExploreRow {
                    replica: r as u64,
                    t: s.t,
                    explored_infected: s.infected,
                    revealed_edges: s.revealed,
                    forest: s.forest,
                    full_graph_infected: g.1,
                });
            }
        }
        let tests: Vec<KsAtTime> = ts
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let a: Vec<f64> = explored.iter().map(|s| s[i].infected as f64).collect();
                let b: Vec<f64> = direct.iter().map(|s| s[i].1 as f64).collect();
                let ks = ks_two_sample(&a, &b);
                let forest = explored.iter().filter(|s| s[i].forest).count() as f64 / reps as f64;
                KsAtTime { t, statistic: ks.statistic, p_value: ks.p_value, forest_fraction: forest }
            })
            .collect();
        let passed = tests.iter().all(|k| k.p_value > ALPHA);
        let result = serde_json::json!({ "params": params, "reps": reps, "alpha": ALPHA, "ks": tests });
        Ok(Outcome::new(&rows, &result)?.check("exploration_matches_full_graph", passed))
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoupleMode {
    /// Finite chains with known rates; see `--delta` and `--eps`.
    Toy,
    /// Exploration process against the herds process.
    Exploration,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupleArgs {
    #[arg(long, value_enum, default_value_t = CoupleMode::Toy)]
    pub mode: CoupleMode,
    #[arg(long, default_value_t = 20_000)]
    pub reps: u64,
    #[arg(long, default_value_t = 4.0)]
    pub horizon: f64,
    /// Budget `a` on f before T_a.
    #[arg(long, default_value_t = 0.5)]
    pub budget: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5, 1.0, 2.0, 4.0])]
    pub grid: Vec<f64>,
    /// Toy chains: extra chain-2 rate out of state 0.
    #[arg(long, default_value_t = 0.3)]
    pub delta: f64,
    /// Toy chains: chain-1 rate from 0 into the bad state.
    #[arg(long, default_value_t = 0.2)]
    pub eps: f64,
    #[arg(long, default_value_t = 200)]
    pub n: u32,
    #[arg(long, default_value_t = 3)]
    pub d: u32,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub v: f64,
    /// Constant in f = c_f (|A| + |E|)^2 / n; defaults to a bound derived
    /// from the rates.
    #[arg(long)]
    pub c_f: Option<f64>,
}

/// Chain 1 on {0, 1, 2} with bad state 2, chain 2 on {0, 1}. From 0 the
/// chains disagree at total rate `delta + eps`.
pub fn toy_chains(delta: f64, eps: f64) -> ToyChains {
    ToyChains {
        r1: vec![vec![0.0, 1.0, eps], vec![2.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]],
        r2: vec![vec![0.0, 1.0 + delta], vec![2.0, 0.0]],
        good: vec![true, true, false],
        psi: vec![0, 1, 0],
        f: vec![delta + eps, 0.0, 0.0],
    }
}

impl CoupleArgs {
    fn run(&self, seed: u64) -> Result<Outcome> {
        let reps = count("reps", self.reps, 2)?;
        let horizon = positive("horizon", self.horizon)?;
        let grid = times("grid", &self.grid)?;
        if !(self.budget.is_finite() && self.budget >= 0.0) {
            return Err(reject("budget", "must be finite and >= 0"));
        }
        match self.mode {
            CoupleMode::Toy => {
                if !(self.delta >= 0.0 && self.eps >= 0.0 && self.delta.is_finite() && self.eps.is_finite()) {
                    return Err(reject("delta", "delta and eps must be finite and >= 0"));
                }
                let spec = toy_chains(self.delta, self.eps);
                let report = run_coupling(&spec, &0, horizon, self.budget, &grid, reps, derive_seed(seed, &[0]))?;
                // First jump from 0: both move, chain 1 alone, or chain 2 alone.
                let firsts = par_replicas(derive_seed(seed, &[1]), reps, |_, rng| {
                    let mut st = CoupledState::start(&spec, 0).expect("0 is good");
                    match coupled_step(&spec, &mut st, rng).expect("consistent rates").map(|i| i.mover) {
                        Some(Mover::Both) => 0usize,
                        Some(Mover::A) => 1,
                        _ => 2,
                    }
                });
                let counts: Vec<u64> = (0..3).map(|k| firsts.iter().filter(|&&m| m == k).count() as u64).collect();
                let total = 1.0 + self.delta + self.eps;
                let expected = [1.0 / total, self.eps / total, self.delta / total];
                let keep: Vec<usize> = (0..3).filter(|&k| expected[k] > 0.0).collect();
                let chi = chi_square_gof(
                    &keep.iter().map(|&k| counts[k]).collect::<Vec<_>>(),
                    &keep.iter().map(|&k| expected[k]).collect::<Vec<_>>(),
                );
                let chi_ok = keep.len() < 2 || chi.p_value > ALPHA;
                let result = serde_json::json!({
                    "chains": spec,
                    "budget": self.budget,
                    "rows": report.rows,
                    "first_jump_counts": counts,
                    "first_jump_chi_square": chi,
                });
                Ok(Outcome::new(&report.rows, &result)?
                    .check("break_bound_holds", report.all_hold())
                    .check("first_jump_law", chi_ok))
            }
            CoupleMode::Exploration => {
                let params = graph_model(self.n, self.d, self.lambda, self.v)?;
                let c_f = self.c_f.unwrap_or_else(|| default_c_f(&params));
                let spec = ExplorationHerds::new(params, c_f)?;
                let x0 = ExploredState::initial(self.n, self.d, 0)?;
                // Each coupled step fails loudly if psi(x) != y while coupled.
                let report = run_coupling(&spec, &x0, horizon, self.budget, &grid, reps, seed)?;
                let broke = report.sigma.iter().filter(|s| s.is_some()).count();
                let result = serde_json::json!({
                    "params": params,
                    "c_f": c_f,
                    "budget": self.budget,
                    "rows": report.rows,
                    "broken": broke,
                    "budget_exceeded": report.t_a.iter().filter(|t| t.is_some()).count(),
                });
                Ok(Outcome::new(&report.rows, &result)?
                    .check("break_bound_holds", report.all_hold())
                    .check("projection_consistent_until_break", true))
            }
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiArgs {
    #[arg(long, default_value_t = 3)]
    pub d: u32,
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub v: f64,
    /// Moment order.
    #[arg(long, default_value_t = 1)]
    pub p: u32,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0])]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = 40_000)]
    pub reps: u64,
    /// Check that the 95% interval contains this value.
    #[arg(long)]
    pub expect: Option<f64>,
    /// Also tabulate E[X_{s+t}^p] against E[X_s^p] E[X_t^p] for p = 1, 2.
    #[arg(long)]
    pub submult: bool,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 4.0])]
    pub submult_times: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub submult_reps: u64,
}

impl PhiArgs {
    fn run(&self, seed: u64) -> Result<Outcome> {
        let params = model(self.d, self.lambda, self.v)?;
        let grid = times("grid", &self.grid)?;
        count("p", u64::from(self.p), 1)?;
        let reps = count("reps", self.reps, 40)?;
        let init = HerdConfig::singleton(self.d);
        let est = estimate_phi(&params, &init, self.p, &grid, reps, derive_seed(seed, &[0]))?;
        let table = if self.submult {
            let ts = times("submult_times", &self.submult_times)?;
            let reps = count("submult_reps", self.submult_reps, 2)?;
            Some(submultiplicativity(&params, &init, &[1, 2], &ts, reps, derive_seed(seed, &[1]))?)
        } else {
            None
        };
        let result = serde_json::json!({ "estimate": est, "submultiplicativity": table });
        let mut out = Outcome::new(&est.points, &result)?
            .check("non_degenerate", !est.degenerate)
            .check("fekete_consistent", est.fekete_consistent);
        if self.p == 1 {
            out = out.check("reverse_bound", est.reverse_bound_holds());
        }
        if let Some(x) = self.expect {
            out = out.check("ci_contains_expected", est.ci_contains(x));
        }
        if let Some(rows) = &table {
            out = out.check("submultiplicative", rows.iter().all(|r| r.holds));
        }
        Ok(out)
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaBarArgs {
    #[arg(long, default_value_t = 3)]
    pub d: u32,
    #[arg(long, default_value_t = 1.0)]
    pub v: f64,
    /// Stop once the bracket is this narrow.
    #[arg(long, default_value_t = 0.02)]
    pub tolerance: f64,
    /// Lower bracket end; defaults to 1/d.
    #[arg(long)]
    pub lo: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub hi: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0])]
    pub phi_grid: Vec<f64>,
    #[arg(long, default_value_t = 40_000)]
    pub phi_reps: u64,
    #[arg(long, default_value_t = 100.0)]
    pub survival_time: f64,
    #[arg(long, default_value_t = 10_000)]
    pub survival_reps: u64,
    /// Survival probes stop a replica above this many particles and count
    /// it as surviving.
    #[arg(long, default_value_t = 250)]
    pub particle_cap: u64,
}

#[derive(Serialize)]
struct ProbeRow {
    index: u64,
    lambda: f64,
    log_phi: Option<f64>,
    log_phi_se: Option<f64>,
    survivors: u64,
    survival_reps: u64,
    capped: u64,
    pilot_only: bool,
    supercritical: bool,
    agree: bool,
}

impl LambdaBarArgs {
    fn run(&self, seed: u64) -> Result<Outcome> {
        model(self.d, 0.0, self.v)?;
        let mut cfg = LambdaBarConfig::new(self.v, self.d, derive_seed(seed, &[0]));
        cfg.tolerance = positive("tolerance", self.tolerance)?;
        if let Some(lo) = self.lo {
            cfg.lo = lo;
        }
        if !(cfg.lo >= 0.0 && cfg.lo < self.hi && self.hi.is_finite()) {
            return Err(reject("hi", "need 0 <= lo < hi"));
        }
        cfg.hi = self.hi;
        cfg.phi_grid = times("phi_grid", &self.phi_grid)?;
        cfg.phi_reps = count("phi_reps", self.phi_reps, 40)?;
        cfg.survival_time = positive("survival_time", self.survival_time)?;
        cfg.survival_reps = count("survival_reps", self.survival_reps, 1)?;
        cfg.particle_cap = count("particle_cap", self.particle_cap, 1)?;
        let est = estimate_lambda_bar(&cfg)?;
        let at = HerdsParams::new(est.estimate, self.v, self.d)?;
        let phi = estimate_phi(&at, &HerdConfig::singleton(self.d), 1, &cfg.phi_grid, cfg.phi_reps, derive_seed(seed, &[1]))?;
        let rows: Vec<ProbeRow> = est
            .transcript
            .iter()
            .map(|p| ProbeRow {
                index: p.index,
                lambda: p.lambda,
                log_phi: p.log_phi,
                log_phi_se: p.log_phi_se,
                survivors: p.survivors,
                survival_reps: p.survival_reps,
                capped: p.capped,
                pilot_only: p.pilot_only,
                supercritical: p.verdict == herds_core::estimators::Verdict::Supercritical,
                agree: p.agree,
            })
            .collect();
        let floor = est.estimate >= 1.0 / f64::from(self.d) - cfg.tolerance;
        let result = serde_json::json!({ "search": est, "phi_at_estimate": phi });
        Ok(Outcome::new(&rows, &result)?
            .check("converged", est.converged && est.width() <= cfg.tolerance)
            .check("floor_one_over_d", floor)
            .check("phi_ci_contains_one", phi.ci_contains(1.0)))
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionArg {
    V,
    Lambda,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivativeArgs {
    #[arg(long, value_enum, default_value_t = DirectionArg::V)]
    pub direction: DirectionArg,
    #[arg(long, default_value_t = 3)]
    pub d: u32,
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub v: f64,
    #[arg(long, default_value_t = 1.0)]
    pub horizon: f64,
    /// Finite-difference step; 0.1 for v and 0.05 for lambda if unset.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, default_value_t = 400_000)]
    pub fd_reps: u64,
    #[arg(long, default_value_t = 10_000)]
    pub formula_reps: u64,
    /// Coarse trapezoid intervals; the fine rule uses twice as many.
    #[arg(long, default_value_t = 20)]
    pub k: u32,
}

#[derive(Serialize)]
struct SideRow {
    quantity: &'static str,
    mean: f64,
    se: f64,
}

impl DerivativeArgs {
    fn run(&self, seed: u64) -> Result<Outcome> {
        let params = model(self.d, self.lambda, self.v)?;
        let (direction, eps) = match self.direction {
            DirectionArg::V => (Direction::V, self.eps.unwrap_or(0.1)),
            DirectionArg::Lambda => (Direction::Lambda, self.eps.unwrap_or(0.05)),
        };
        let cfg = DerivativeConfig {
            direction,
            params,
            horizon: positive("horizon", self.horizon)?,
            eps: positive("eps", eps)?,
            fd_reps: count("fd_reps", self.fd_reps, 2)?,
            formula_reps: count("formula_reps", self.formula_reps, 2)?,
            k: count("k", u64::from(self.k), 20)? as u32,
            seed,
        };
        let r = derivative_check(&cfg)?;
        let rows = [
            SideRow { quantity: "finite_difference", mean: r.finite_difference.mean, se: r.finite_difference.se },
            SideRow { quantity: "formula", mean: r.formula.mean, se: r.formula.se },
            SideRow { quantity: "formula_coarse", mean: r.formula_coarse.mean, se: r.formula_coarse.se },
            SideRow { quantity: "richardson", mean: r.richardson, se: r.formula.se },
            SideRow { quantity: "richardson_gap", mean: r.richardson_gap.mean, se: r.richardson_gap.se },
        ];
        Ok(Outcome::new(&rows, &r)?
            .check("overlap_95", r.overlap)
            .check("richardson_consistent", r.richardson_ok)
            .check("fd_se_within_5_percent", r.finite_difference.se <= 0.05 * r.finite_difference.mean.abs()))
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonotonicityArgs {
    #[arg(long, default_value_t = 3)]
    pub d: u32,
    #[arg(long, value_delimiter = ',', default_values_t = [0.2, 0.3, 0.4])]
    pub lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 4.0])]
    pub vs: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0])]
    pub grid: Vec<f64>,
    #[arg(long, default_value_t = 40_000)]
    pub reps: u64,
}

#[derive(Serialize)]
struct CellRow {
    lambda: f64,
    v: f64,
    log_phi: Option<f64>,
    log_phi_se: Option<f64>,
}

impl MonotonicityArgs {
    fn run(&self, seed: u64) -> Result<Outcome> {
        for &l in &self.lambdas {
            model(self.d, l, 0.0)?;
        }
        for &v in &self.vs {
            model(self.d, 0.0, v)?;
        }
        if self.lambdas.is_empty() || self.vs.is_empty() {
            return Err(reject("lambdas", "need at least one lambda and one v"));
        }
        let grid = times("grid", &self.grid)?;
        let reps = count("reps", self.reps, 40)?;
        let r = monotonicity_report(self.d, &self.lambdas, &self.vs, &grid, reps, seed)?;
        let mut rows = Vec::new();
        for (i, &lambda) in r.lambdas.iter().enumerate() {
            for (j, &v) in r.vs.iter().enumerate() {
                let c = &r.cells[i][j];
                rows.push(CellRow { lambda, v, log_phi: c.log_phi, log_phi_se: c.log_phi_se });
            }
        }
        let result = serde_json::json!({
            "d": r.d,
            "lambdas": r.lambdas,
            "vs": r.vs,
            "lambda_tests": r.lambda_tests,
            "v_tests": r.v_tests,
        });
        Ok(Outcome::new(&rows, &result)?.check("strictly_increasing", r.all_increasing()))
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Median fits a + b ln n with b > 0; p95 below 50 ln n at the largest n.
    Subcritical,
    /// At least 90% of replicas alive at the horizon for every n.
    Supercritical,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingArgs {
    #[arg(long, default_value_t = 3)]
    pub d: u32,
    #[arg(long, default_value_t = 0.2)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub v: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [100, 400, 1600])]
    pub ns: Vec<u32>,
    #[arg(long, default_value_t = 500)]
    pub reps: u64,
    #[arg(long, default_value_t = 10_000.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 1_000_000_000)]
    pub event_cap: u64,
    #[arg(long, value_enum, default_value_t = Regime::Subcritical)]
    pub expect: Regime,
    /// Largest allowed |residual| / median of the log fit.
    #[arg(long, default_value_t = 0.1)]
    pub max_residual: f64,
}

impl ScalingArgs {
    fn run(&self, seed: u64) -> Result<Outcome> {
        if self.ns.is_empty() {
            return Err(reject("ns", "need at least one graph size"));
        }
        for &n in &self.ns {
            graph_model(n, self.d, self.lambda, self.v)?;
        }
        let reps = count("reps", self.reps, 2)?;
        let horizon = positive("horizon", self.horizon)?;
        let r = extinction_scaling(self.d, self.lambda, self.v, &self.ns, reps, horizon, seed, count("event_cap", self.event_cap, 1)?)?;
        let mut out = Outcome::new(&r.rows, &r)?;
        match self.expect {
            Regime::Subcritical => {
                let slope = r.fit.is_some_and(|f| f.slope > 0.0);
                let residual = r.max_rel_residual.is_some_and(|x| x <= self.max_residual);
                let last = r.rows.iter().max_by_key(|row| row.n).expect("non-empty");
                out = out
                    .check("positive_log_slope", slope && r.rows.len() >= 2)
                    .check("log_fit_residual", residual)
                    .check("p95_below_50_ln_n", last.p95 < 50.0 * f64::from(last.n).ln());
            }
            Regime::Supercritical => {
                let all = r.rows.iter().all(|row| row.censored as f64 >= 0.9 * row.reps as f64);
                out = out.check("ninety_percent_survive_to_horizon", all);
            }
        }
        Ok(out)
    }
}

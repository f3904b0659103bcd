use std::collections::{BTreeMap, BTreeSet};

use herds_core::estimators::{
    birth_count_tail, derivative_check, estimate_lambda_bar, estimate_phi, extinction_scaling, g_v_estimate,
    h_lambda_estimate, monotonicity_report, path_herd, projection_check, submultiplicativity, DerivativeConfig,
    Direction, LambdaBarConfig,
};
use herds_core::herds::{HerdConfig, HerdsParams};
use herds_core::tree_shapes::{HerdShape, TreeVertex};

type Herd = BTreeSet<TreeVertex>;

/// Truncated generator expansion of `E[X_t | delta_A]`, written from the
/// transition rules alone. `X` is additive over herds and so is every
/// `L^k X`, which makes a per-herd recursion enough.
struct Generator {
    d: u32,
    lambda: f64,
    v: f64,
    memo: BTreeMap<(usize, Vec<TreeVertex>), f64>,
}

impl Generator {
    fn new(d: u32, lambda: f64, v: f64) -> Self {
        Self { d, lambda, v, memo: BTreeMap::new() }
    }

    fn splits(a: &Herd) -> Vec<(Herd, Herd)> {
        let mut cuts = BTreeSet::new();
        for x in a {
            let mut c = x.clone();
            while let Some(p) = c.parent() {
                cuts.insert(c.clone());
                c = p;
            }
        }
        cuts.into_iter()
            .filter_map(|c| {
                let (below, rest): (Herd, Herd) = a.iter().cloned().partition(|x| x.is_descendant_of(&c));
                (!below.is_empty() && !rest.is_empty()).then_some((below, rest))
            })
            .collect()
    }

    /// `(L^k X)(delta_A)`.
    fn lx(&mut self, k: usize, a: &Herd) -> f64 {
        if a.is_empty() {
            return 0.0;
        }
        if k == 0 {
            return a.len() as f64;
        }
        let key = (k, a.iter().cloned().collect::<Vec<_>>());
        if let Some(&v) = self.memo.get(&key) {
            return v;
        }
        let here = self.lx(k - 1, a);
        let mut out = 0.0;
        for x in a {
            let mut b = a.clone();
            b.remove(x);
            out += self.lx(k - 1, &b) - here;
            for y in x.neighbors(self.d) {
                if !a.contains(&y) {
                    let mut b = a.clone();
                    b.insert(y);
                    out += self.lambda * (self.lx(k - 1, &b) - here);
                }
            }
        }
        for (p, q) in Self::splits(a) {
            out += self.v * (self.lx(k - 1, &p) + self.lx(k - 1, &q) - here);
        }
        self.memo.insert(key, out);
        out
    }

    /// Terms `t^k / k! (L^k X)` for `k = 0..=order`, summed over herds.
    fn terms(&mut self, herds: &[Herd], t: f64, order: usize) -> Vec<f64> {
        let mut fact = 1.0;
        (0..=order)
            .map(|k| {
                if k > 0 {
                    fact *= k as f64;
                }
                t.powi(k as i32) / fact * herds.iter().map(|a| self.lx(k, a)).sum::<f64>()
            })
            .collect()
    }
}

fn herd(vs: &[TreeVertex]) -> Herd {
    vs.iter().cloned().collect()
}

#[test]
fn generator_oracle_reproduces_pure_death() {
    let mut g = Generator::new(3, 0.0, 1.0);
    let a = herd(&[TreeVertex::root()]);
    let terms = g.terms(&[a], 0.3, 6);
    let series: f64 = terms.iter().sum();
    assert!((series - (-0.3f64).exp()).abs() < 1e-6);
}

#[test]
fn g_v_on_adjacent_pair_matches_truncated_generator() {
    let (lambda, v, t) = (0.5, 1.0, 0.2);
    let p = HerdsParams::new(lambda, v, 3).unwrap();
    let root = TreeVertex::root();
    let kid = root.child(0);
    let mut g = Generator::new(3, lambda, v);
    let split = g.terms(&[herd(std::slice::from_ref(&root)), herd(std::slice::from_ref(&kid))], t, 4);
    let whole = g.terms(&[herd(&[root.clone(), kid.clone()])], t, 4);
    let oracle: f64 = (0..=3).map(|k| split[k] - whole[k]).sum();
    let tail = (split[4] - whole[4]).abs();
    assert!(oracle > 0.0, "splitting helps growth");

    let xi = HerdConfig::from_shapes(3, vec![HerdShape::new(3, vec![root, kid]).unwrap()]);
    let est = g_v_estimate(&xi, t, &p, 400_000, 21).unwrap();
    assert!(
        (est.mean - oracle).abs() <= 3.0 * est.se + 2.0 * tail,
        "{est:?} vs {oracle} (tail {tail})"
    );
}

#[test]
fn h_lambda_on_adjacent_pair_matches_truncated_generator() {
    let (lambda, v, t) = (0.5, 1.0, 0.2);
    let p = HerdsParams::new(lambda, v, 3).unwrap();
    let a = path_herd(3, 2).unwrap();
    let base = herd(a.particles());
    let mut g = Generator::new(3, lambda, v);
    let whole = g.terms(std::slice::from_ref(&base), t, 4);
    let (mut oracle, mut tail) = (0.0, 0.0);
    for x in &base {
        for y in x.neighbors(3) {
            if !base.contains(&y) {
                let mut b = base.clone();
                b.insert(y);
                let grown = g.terms(&[b], t, 4);
                oracle += (0..=3).map(|k| grown[k] - whole[k]).sum::<f64>();
                tail += (grown[4] - whole[4]).abs();
            }
        }
    }
    let est = h_lambda_estimate(&HerdConfig::from_shapes(3, vec![a]), t, &p, 40_000, 22).unwrap();
    assert!((est.mean - oracle).abs() <= 3.0 * est.se + 2.0 * tail, "{est:?} vs {oracle}");
}

#[test]
fn pure_death_growth_index_is_inverse_e() {
    let p = HerdsParams::new(0.0, 1.0, 3).unwrap();
    let grid: Vec<f64> = (1..=8).map(|k| 0.5 * k as f64).collect();
    let est = estimate_phi(&p, &HerdConfig::singleton(3), 1, &grid, 100_000, 3).unwrap();
    assert!(est.ci_contains((-1.0f64).exp()), "{:?}", est.ci);
    assert!(est.fekete_consistent);
    assert!(!est.degenerate);
}

#[test]
fn growth_index_roots_are_ordered_in_p() {
    let p = HerdsParams::new(0.3, 1.0, 3).unwrap();
    let grid: Vec<f64> = (1..=6).map(f64::from).collect();
    let one = estimate_phi(&p, &HerdConfig::singleton(3), 1, &grid, 40_000, 4).unwrap();
    let two = estimate_phi(&p, &HerdConfig::singleton(3), 2, &grid, 40_000, 5).unwrap();
    let (r1, _, hi1) = one.root().unwrap();
    let (r2, lo2, _) = two.root().unwrap();
    assert!(r2 >= r1 - ((hi1 - r1) + (r2 - lo2)), "{r2} vs {r1}");
    for e in [&one, &two] {
        assert!(e.fekete_consistent, "{:?}", e.points);
        assert!(e.phi.unwrap() < 1.0);
    }
    assert!(one.reverse_bound_holds(), "{:?}", one.max_excess_z);
}

#[test]
fn lambda_derivative_at_zero_has_closed_form() {
    // At lambda = 0 only the seed can give birth, and a newborn is
    // independent of the seed after birth: d/dlambda E[X_T] = d T e^{-T}.
    let t = 1.0_f64;
    let exact = 3.0 * t * (-t).exp();
    let cfg = DerivativeConfig {
        direction: Direction::Lambda,
        params: HerdsParams::new(0.0, 1.0, 3).unwrap(),
        horizon: t,
        eps: 0.02,
        fd_reps: 200_000,
        formula_reps: 4_000,
        k: 20,
        seed: 6,
    };
    let r = derivative_check(&cfg).unwrap();
    assert!(r.finite_difference.mean > 0.0 && r.formula.mean > 0.0);
    assert!((r.formula.mean - exact).abs() <= 3.0 * r.formula.se + 0.01, "{r:?}");
    // The one-sided difference carries an O(eps) bias.
    assert!((r.finite_difference.mean - exact).abs() <= 3.0 * r.finite_difference.se + 0.1, "{r:?}");
    assert!(r.overlap || (r.finite_difference.mean - r.formula.mean).abs() < 0.1);
}

#[test]
fn split_derivative_vanishes_without_births() {
    let cfg = DerivativeConfig {
        direction: Direction::V,
        params: HerdsParams::new(0.0, 1.0, 3).unwrap(),
        horizon: 1.0,
        eps: 0.1,
        fd_reps: 5_000,
        formula_reps: 500,
        k: 20,
        seed: 7,
    };
    let r = derivative_check(&cfg).unwrap();
    assert_eq!(r.finite_difference.mean, 0.0);
    assert_eq!(r.formula.mean, 0.0);
    assert!(r.overlap);
}

#[test]
fn lambda_bar_bisection_is_replayable_and_respects_floor() {
    let mut cfg = LambdaBarConfig::new(1.0, 3, 8);
    cfg.phi_grid = vec![2.0, 4.0, 6.0, 8.0, 10.0];
    cfg.phi_reps = 4_000;
    cfg.survival_time = 30.0;
    cfg.survival_reps = 1_000;
    cfg.particle_cap = 200;
    cfg.tolerance = 0.05;
    let a = estimate_lambda_bar(&cfg).unwrap();
    let b = estimate_lambda_bar(&cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert!(a.converged, "{:?}", a.warnings);
    assert!(a.width() <= cfg.tolerance);
    assert!(a.estimate >= 1.0 / 3.0 - cfg.tolerance);
    assert!(a.lo <= a.estimate && a.estimate <= a.hi);
    // Endpoints are exactly the last sub- and supercritical probes.
    assert!(a.transcript.iter().any(|p| p.lambda == a.lo));
    assert!(a.transcript.iter().any(|p| p.lambda == a.hi));
}

#[test]
fn lambda_bar_rejects_bad_tolerance() {
    let mut cfg = LambdaBarConfig::new(1.0, 3, 8);
    cfg.tolerance = 0.0;
    assert!(estimate_lambda_bar(&cfg).is_err());
}

#[test]
fn one_point_grid_gives_no_order_tests() {
    let r = monotonicity_report(3, &[0.3], &[1.0], &[1.0, 2.0], 400, 9).unwrap();
    assert!(r.lambda_tests.is_empty() && r.v_tests.is_empty());
    assert_eq!(r.cells.len(), 1);
}

#[test]
fn growth_index_increases_in_lambda() {
    let r = monotonicity_report(3, &[0.2, 0.3], &[1.0], &[1.0, 2.0, 3.0, 4.0], 20_000, 10).unwrap();
    assert_eq!(r.lambda_tests.len(), 1);
    assert!(r.all_increasing(), "{:?}", r.lambda_tests);
}

#[test]
fn birth_counts_vanish_at_zero_lambda_and_scale_with_size() {
    let zero = birth_count_tail(&HerdsParams::new(0.0, 1.0, 3).unwrap(), 100.0, 1_000, 11).unwrap();
    assert!(zero.moments.iter().all(|m| m.mean == 0.0));
    let sub = birth_count_tail(&HerdsParams::new(0.2, 1.0, 3).unwrap(), 1_000.0, 40_000, 12).unwrap();
    assert_eq!(sub.censored, 0);
    assert!(sub.warnings.is_empty());
    assert!(sub.scaling.iter().all(|s| s.holds), "{:?}", sub.scaling);
    assert!(sub.moments[0].drift < 0.05);
}

#[test]
fn extinction_scaling_reports_each_size() {
    let r = extinction_scaling(3, 0.2, 1.0, &[20, 40, 80], 200, 1_000.0, 13, u64::MAX).unwrap();
    assert_eq!(r.rows.len(), 3);
    assert!(r.rows.iter().all(|row| row.censored == 0 && row.median > 0.0));
    assert!(r.fit.is_some());
}

#[test]
fn pure_death_moments_factor_exactly() {
    // With no births X_t is Bernoulli(e^{-t}) from a singleton, so every
    // moment is e^{-t} and the product rule holds with equality.
    let p = HerdsParams::new(0.0, 1.0, 3).unwrap();
    let rows = submultiplicativity(&p, &HerdConfig::singleton(3), &[1, 2], &[0.5, 1.0], 40_000, 14).unwrap();
    assert_eq!(rows.len(), 8);
    for r in &rows {
        let exact = (-(r.s + r.t)).exp();
        assert!((r.joint.mean - exact).abs() <= 4.0 * r.joint.se, "{r:?}");
        assert!(r.excess.abs() <= 4.0 * r.se, "{r:?}");
        assert!(r.holds);
    }
}

#[test]
fn growth_moments_are_submultiplicative() {
    let p = HerdsParams::new(0.3, 1.0, 3).unwrap();
    let rows = submultiplicativity(&p, &HerdConfig::singleton(3), &[1], &[1.0, 2.0], 20_000, 15).unwrap();
    assert!(rows.iter().all(|r| r.holds), "{rows:?}");
    assert!(submultiplicativity(&p, &HerdConfig::singleton(3), &[0], &[1.0], 100, 0).is_err());
}

#[test]
fn two_type_projections_match_direct_runs() {
    let p = HerdsParams::new(0.45, 1.0, 3).unwrap();
    let root = TreeVertex::root();
    let a = vec![root.clone(), root.child(1)];
    let b = vec![root.child(0), root.child(0).child(0)];
    let c = projection_check(&p, &a, &b, 2.0, 10_000, 0.01, 16).unwrap();
    assert!(c.passes(0.01), "{c:?}");
}

use herds_core::contact::ContactParams;
use herds_core::coupling::{
    coupled_step, run_coupled_path, run_coupling, CoupledState, ExplorationHerds, Mover, ToyChains,
};
use herds_core::exploration::{default_c_f, simulate_exploration, ExploredState};
use herds_core::herds::{simulate_replicas, HerdConfig, HerdsParams, SimOptions};
use herds_core::seeding::par_replicas;
use herds_core::stats::{chi_square_gof, ks_two_sample};

/// Chain 1 on {0, 1, 2} with bad state 2; chain 2 on {0, 1}; identity
/// projection. From 0, the class rates differ by `delta` and chain 1
/// leaves the good set at rate `eps`, so the exact break rate is
/// `delta + eps`.
fn toy(delta: f64, eps: f64) -> ToyChains {
    ToyChains {
        r1: vec![vec![0.0, 1.0, eps], vec![2.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]],
        r2: vec![vec![0.0, 1.0 + delta], vec![2.0, 0.0]],
        good: vec![true, true, false],
        psi: vec![0, 1, 0],
        f: vec![delta + eps, 0.0, 0.0],
    }
}

#[test]
fn empirical_break_rate_matches_exact_value() {
    let (delta, eps) = (0.3, 0.2);
    let spec = toy(delta, eps);
    let moves = par_replicas(1, 60_000, |_, rng| {
        let mut st = CoupledState::start(&spec, 0).unwrap();
        let info = coupled_step(&spec, &mut st, rng).unwrap().unwrap();
        match (info.mover, info.broke) {
            (Mover::Both, false) => 0usize,
            (Mover::A, true) => 1,
            (Mover::B, true) => 2,
            other => panic!("unexpected move {other:?}"),
        }
    });
    let counts: Vec<u64> = (0..3).map(|k| moves.iter().filter(|&&m| m == k).count() as u64).collect();
    let total = 1.0 + eps + delta;
    let chi = chi_square_gof(&counts, &[1.0 / total, eps / total, delta / total]);
    assert!(chi.p_value > 0.001, "{chi:?}");
    // Break rate: break fraction times total jump rate.
    let rate = (counts[1] + counts[2]) as f64 / moves.len() as f64 * total;
    assert!((rate - (delta + eps)).abs() < 0.02);
    assert!(rate <= 2.0 * (delta + eps));
}

#[test]
fn break_probability_obeys_linear_bound() {
    let spec = toy(0.3, 0.2);
    let budget = 0.5;
    let report = run_coupling(&spec, &0, 4.0, budget, &[0.25, 0.5, 1.0, 2.0, 4.0], 20_000, 2).unwrap();
    assert!(report.all_hold(), "{:?}", report.rows);
    assert!(report.t_a.iter().all(Option::is_none));
}

#[test]
fn identical_toy_chains_never_break() {
    let spec = ToyChains::identical(vec![vec![0.0, 1.0], vec![3.0, 0.0]]);
    let report = run_coupling(&spec, &0, 50.0, 0.0, &[10.0, 50.0], 200, 3).unwrap();
    assert!(report.sigma.iter().all(Option::is_none));
    assert!(report.rows.iter().all(|r| r.p_hat == 0.0));
}

#[test]
fn both_marginals_have_their_own_rates() {
    let (delta, eps) = (0.3, 0.2);
    let spec = toy(delta, eps);
    // Jump counts and occupation time of state 0 for each marginal.
    let tallies = par_replicas(4, 400, |_, rng| {
        let mut st = CoupledState::start(&spec, 0).unwrap();
        let mut t = [0.0f64; 2];
        let mut a = [0u64; 2];
        let mut b = 0u64;
        while st.time < 50.0 {
            let (x, y) = (st.x, st.y);
            let info = coupled_step(&spec, &mut st, rng).unwrap().unwrap();
            if x == 0 {
                t[0] += info.dt;
            }
            if y == 0 {
                t[1] += info.dt;
            }
            if x == 0 && st.x != 0 {
                a[st.x - 1] += 1;
            }
            if y == 0 && st.y != 0 {
                b += 1;
            }
        }
        (t, a, b)
    });
    let (mut t0, mut t0y, mut a01, mut a02, mut b01) = (0.0, 0.0, 0u64, 0u64, 0u64);
    for (t, a, b) in &tallies {
        t0 += t[0];
        t0y += t[1];
        a01 += a[0];
        a02 += a[1];
        b01 += b;
    }
    let chi = chi_square_gof(&[a01, a02], &[1.0 / (1.0 + eps), eps / (1.0 + eps)]);
    assert!(chi.p_value > 0.001, "{chi:?}");
    for (n, time, rate) in [(a01 as f64, t0, 1.0), (a02 as f64, t0, eps), (b01 as f64, t0y, 1.0 + delta)] {
        assert!((n / time - rate).abs() <= 3.0 * n.sqrt() / time, "{} vs {rate}", n / time);
    }
}

#[test]
fn exploration_herds_coupling_keeps_both_marginals() {
    let params = ContactParams::new(200, 3, 0.5, 1.0).unwrap();
    let spec = ExplorationHerds::new(params, default_c_f(&params)).unwrap();
    let x0 = ExploredState::initial(200, 3, 0).unwrap();
    let t = 2.0;
    let runs = par_replicas(5, 1_500, |_, rng| {
        let path = run_coupled_path(&spec, x0.clone(), t, 2.0, &[t], false, false, rng).unwrap();
        let (_, x, y, _) = &path.samples[0];
        let herd_x: usize = y.iter().map(|c| c.particle_count()).sum();
        (x.infected().len() as f64, herd_x as f64, path.sigma)
    });
    let hp = HerdsParams::new(0.5, 1.0, 3).unwrap();
    let direct: Vec<f64> = simulate_replicas(&HerdConfig::singleton(3), &hp, t, &[t], &SimOptions::default(), 20_000, 6)
        .iter()
        .map(|s| s.samples[0].x as f64)
        .collect();
    let herd_side: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let ks = ks_two_sample(&herd_side, &direct);
    assert!(ks.passes(0.01), "{ks:?}");
    let explored: Vec<f64> = par_replicas(7, 20_000, |_, rng| {
        simulate_exploration(&params, 0, t, &[t], rng).unwrap().samples[0].infected as f64
    });
    let chain1: Vec<f64> = runs.iter().map(|r| r.0).collect();
    assert!(ks_two_sample(&chain1, &explored).passes(0.01));
    // At n = 200 most runs stay coupled to t = 2.
    let broken = runs.iter().filter(|r| r.2.is_some_and(|s| s <= t)).count();
    assert!(broken * 5 < runs.len(), "{broken} of {} broke", runs.len());
}

#[test]
fn exploration_coupling_respects_budget_bound() {
    let params = ContactParams::new(200, 3, 0.5, 1.0).unwrap();
    let spec = ExplorationHerds::new(params, default_c_f(&params)).unwrap();
    let x0 = ExploredState::initial(200, 3, 0).unwrap();
    let report = run_coupling(&spec, &x0, 1.0, 1.0, &[0.1, 0.25, 0.5, 1.0], 2_000, 8).unwrap();
    assert!(report.all_hold(), "{:?}", report.rows);
}

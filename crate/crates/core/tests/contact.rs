use herds_core::contact::{
    duality_gap, extinction_all_infected, hit_probability, simulate_contact, ContactParams, GraphicalRun, Marks,
};
use herds_core::graph::HalfEdgeMatching;
use herds_core::seeding::{par_replicas, replica_rng};
use herds_core::stats::{ks_two_sample, MeanAcc};
use rand::seq::SliceRandom;
use rand::Rng;

fn harmonic(k: u32) -> f64 {
    (1..=k).map(|j| 1.0 / f64::from(j)).sum()
}

#[test]
fn no_transmission_gives_harmonic_extinction_time() {
    let p = ContactParams::new(10, 3, 0.0, 1.0).unwrap();
    let taus = par_replicas(1, 20_000, |_, rng| {
        simulate_contact(&p, &[0, 3, 4, 7, 9], 100.0, &[], u64::MAX, rng).unwrap().extinction_time.unwrap()
    });
    let acc: MeanAcc = taus.into_iter().collect();
    assert!((acc.mean() - harmonic(5)).abs() <= 3.0 * acc.se(), "{} vs {}", acc.mean(), harmonic(5));

    let p = ContactParams::new(20, 3, 0.0, 1.0).unwrap();
    let all = extinction_all_infected(&p, 100.0, 20_000, 2, u64::MAX).unwrap();
    assert!(all.iter().all(|s| !s.censored));
    let acc: MeanAcc = all.iter().map(|s| s.tau).collect();
    assert!((acc.mean() - harmonic(20)).abs() <= 3.0 * acc.se());
}

/// Contact process on a fixed configuration-model multigraph, written from
/// scratch: vertex-level rates recomputed at every step.
fn static_oracle_tau<R: Rng>(n: usize, d: usize, lambda: f64, rng: &mut R) -> f64 {
    let mut stubs: Vec<usize> = (0..n * d).collect();
    stubs.shuffle(rng);
    let mut nbrs = vec![Vec::new(); n];
    for pair in stubs.chunks(2) {
        let (a, b) = (pair[0] / d, pair[1] / d);
        nbrs[a].push(b);
        nbrs[b].push(a);
    }
    let mut infected = vec![true; n];
    let mut t = 0.0;
    loop {
        let ids: Vec<usize> = (0..n).filter(|&u| infected[u]).collect();
        if ids.is_empty() {
            return t;
        }
        let total = ids.len() as f64 * (1.0 + lambda * d as f64);
        t += -(1.0 - rng.random::<f64>()).ln() / total;
        let u = ids[rng.random_range(0..ids.len())];
        if rng.random::<f64>() < 1.0 / (1.0 + lambda * d as f64) {
            infected[u] = false;
        } else {
            let w = nbrs[u][rng.random_range(0..d)];
            infected[w] = true;
        }
    }
}

#[test]
fn frozen_graph_matches_static_simulator() {
    let p = ContactParams::new(10, 3, 0.5, 0.0).unwrap();
    let engine: Vec<f64> = extinction_all_infected(&p, 1e6, 10_000, 3, u64::MAX).unwrap().iter().map(|s| s.tau).collect();
    let oracle = par_replicas(4, 10_000, |_, rng| static_oracle_tau(10, 3, 0.5, rng));
    let ks = ks_two_sample(&engine, &oracle);
    assert!(ks.passes(0.01), "{ks:?}");
}

#[test]
fn thinned_marks_reproduce_full_marks_pathwise() {
    for (n, d, lambda, v) in [(8, 3, 1.0, 1.0), (6, 2, 1.5, 0.5), (4, 3, 0.7, 3.0), (7, 2, 2.0, 0.0)] {
        let p = ContactParams::new(n, d, lambda, v).unwrap();
        for seed in 0..40u64 {
            let g = HalfEdgeMatching::sample_uniform(n, d, &mut replica_rng(seed, 99)).unwrap();
            let init = vec![0, n / 2];
            let mut full = GraphicalRun::new(&p, g.clone(), std::slice::from_ref(&init), Marks::All, seed).unwrap();
            let mut thin = GraphicalRun::new(&p, g, &[init], Marks::InfectedOnly, seed).unwrap();
            full.run(8.0);
            thin.run(8.0);
            assert_eq!(full.log, thin.log, "n={n} seed={seed}");
            assert_eq!(full.infected(0), thin.infected(0));
            assert_eq!(full.graph(), thin.graph());
        }
    }
}

#[test]
fn shared_construction_is_monotone_in_initial_set() {
    let p = ContactParams::new(12, 3, 0.8, 1.0).unwrap();
    for seed in 0..100u64 {
        let g = HalfEdgeMatching::sample_uniform(12, 3, &mut replica_rng(seed, 7)).unwrap();
        let sets = vec![vec![2], vec![2, 5], vec![2, 5, 6, 11], (0..12).collect()];
        let mut run = GraphicalRun::new(&p, g, &sets, Marks::All, seed).unwrap();
        while run.step(10.0).is_some() {
            assert!(run.is_nested(), "seed {seed} at {}", run.time);
        }
    }
}

#[test]
fn graphical_construction_has_engine_law() {
    let p = ContactParams::new(8, 3, 0.8, 1.0).unwrap();
    let engine = par_replicas(5, 10_000, |_, rng| {
        simulate_contact(&p, &[0], 2.0, &[], u64::MAX, rng).unwrap().final_infected.len() as f64
    });
    let graphical = par_replicas(6, 10_000, |r, rng| {
        let g = HalfEdgeMatching::sample_uniform(8, 3, rng).unwrap();
        let mut run = GraphicalRun::new(&p, g, &[vec![0]], Marks::InfectedOnly, 1_000_000 + r).unwrap();
        run.run(2.0);
        run.infected(0).len() as f64
    });
    let ks = ks_two_sample(&engine, &graphical);
    assert!(ks.passes(0.01), "{ks:?}");
}

#[test]
fn all_infected_survival_bounded_by_union_over_seeds() {
    let p = ContactParams::new(20, 3, 0.5, 1.0).unwrap();
    let all: Vec<u32> = (0..20).collect();
    let single = hit_probability(&p, &[0], &all, 3.0, 20_000, 7).unwrap();
    let full = hit_probability(&p, &all, &all, 3.0, 20_000, 8).unwrap();
    assert!(20.0 * single.mean >= full.mean - 3.0 * (20.0 * single.se).hypot(full.se));
}

#[test]
fn seed_vertex_choice_is_immaterial() {
    let p = ContactParams::new(20, 3, 0.6, 1.0).unwrap();
    let all: Vec<u32> = (0..20).collect();
    let a = hit_probability(&p, &[0], &all, 2.0, 20_000, 9).unwrap();
    let b = hit_probability(&p, &[13], &all, 2.0, 20_000, 10).unwrap();
    assert!((a.mean - b.mean).abs() <= 3.0 * a.se.hypot(b.se));
}

#[test]
fn duality_holds_on_small_graph() {
    let p = ContactParams::new(10, 3, 0.5, 1.0).unwrap();
    let g = duality_gap(&p, &[0], &[3, 6, 8], 2.0, 20_000, 11).unwrap();
    assert!(g.z.abs() <= 3.0, "{g:?}");
    let same = duality_gap(&p, &[1, 2], &[1, 2], 2.0, 20_000, 12).unwrap();
    assert!(same.z.abs() <= 3.0);
}

#[test]
fn single_seed_law_does_not_depend_on_the_seed_vertex() {
    // Relabelling vertices is a symmetry of the uniform graph, so the
    // infected count from vertex 0 and from vertex 13 share one law.
    let p = ContactParams::new(20, 3, 0.6, 1.0).unwrap();
    let times = [1.0, 3.0];
    let from = |u: u32, seed: u64| {
        par_replicas(seed, 10_000, |_, rng| simulate_contact(&p, &[u], 3.0, &times, u64::MAX, rng).unwrap().samples)
    };
    let (a, b) = (from(0, 31), from(13, 32));
    for i in 0..times.len() {
        let x: Vec<f64> = a.iter().map(|s| s[i].1 as f64).collect();
        let y: Vec<f64> = b.iter().map(|s| s[i].1 as f64).collect();
        let ks = ks_two_sample(&x, &y);
        assert!(ks.passes(0.01), "t={} {ks:?}", times[i]);
    }
}

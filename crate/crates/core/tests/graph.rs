use std::collections::BTreeMap;

use herds_core::graph::{graph_step, switch_clock_rate, Edge, HalfEdge, HalfEdgeMatching};
use herds_core::seeding::{par_replicas, replica_rng};
use herds_core::stats::{chi_square_gof, MeanAcc};

/// All perfect matchings of `0..m` by brute force.
fn all_matchings(m: u32) -> Vec<Vec<Edge>> {
    fn rec(free: Vec<u32>, acc: &mut Vec<Edge>, out: &mut Vec<Vec<Edge>>) {
        if free.is_empty() {
            let mut e = acc.clone();
            e.sort();
            out.push(e);
            return;
        }
        let first = free[0];
        for i in 1..free.len() {
            let other = free[i];
            let rest: Vec<u32> = free.iter().copied().filter(|&x| x != first && x != other).collect();
            acc.push(Edge::new(HalfEdge(first), HalfEdge(other)));
            rec(rest, acc, out);
            acc.pop();
        }
    }
    let mut out = Vec::new();
    rec((0..m).collect(), &mut Vec::new(), &mut out);
    out
}

fn frequencies(samples: &[Vec<Edge>], states: &[Vec<Edge>]) -> Vec<u64> {
    let index: BTreeMap<&Vec<Edge>, usize> = states.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let mut counts = vec![0u64; states.len()];
    for s in samples {
        counts[index[s]] += 1;
    }
    counts
}

#[test]
fn uniform_sampler_hits_all_fifteen_matchings_equally() {
    let states = all_matchings(6);
    assert_eq!(states.len(), 15);
    let samples = par_replicas(1, 100_000, |_, rng| HalfEdgeMatching::sample_uniform(3, 2, rng).unwrap().edges());
    let counts = frequencies(&samples, &states);
    let chi = chi_square_gof(&counts, &[1.0 / 15.0; 15]);
    assert!(chi.p_value > 0.001, "{chi:?}");
    let n = samples.len() as f64;
    for &c in &counts {
        let p = 1.0 / 15.0;
        assert!((c as f64 / n - p).abs() <= 3.0 * (p * (1.0 - p) / n).sqrt());
    }
}

#[test]
fn switching_chain_is_stationary_for_the_uniform_law() {
    let states = all_matchings(6);
    // Start every replica from one fixed matching and run long enough to mix.
    let start = HalfEdgeMatching::from_edges(3, 2, &states[0]).unwrap();
    let samples = par_replicas(2, 60_000, |_, rng| {
        let mut g = start.clone();
        let mut t = 0.0;
        while t < 30.0 {
            let (dt, _) = graph_step(&mut g, 1.0, rng).unwrap();
            t += dt;
        }
        assert!(g.is_valid());
        g.edges()
    });
    let counts = frequencies(&samples, &states);
    let chi = chi_square_gof(&counts, &[1.0 / 15.0; 15]);
    assert!(chi.p_value > 0.001, "{chi:?}");
}

#[test]
fn holding_times_have_clock_mean() {
    let mut rng = replica_rng(3, 0);
    let mut g = HalfEdgeMatching::sample_uniform(4, 3, &mut rng).unwrap();
    let rate = switch_clock_rate(4, 3, 1.0).unwrap();
    let acc: MeanAcc = (0..50_000).map(|_| graph_step(&mut g, 1.0, &mut rng).unwrap().0).collect();
    assert!((acc.mean() - 1.0 / rate).abs() <= 3.0 * acc.se());
    assert_eq!(g.edges().len(), 6);
}

#[test]
fn sampled_codes_are_uniform_over_pairs_and_signs() {
    // Three edges: 2 * C(3, 2) = 6 codes.
    let mut rng = replica_rng(4, 0);
    let g = HalfEdgeMatching::sample_uniform(3, 2, &mut rng).unwrap();
    let mut counts: BTreeMap<(Edge, Edge, bool), u64> = BTreeMap::new();
    for _ in 0..60_000 {
        let c = g.sample_code(&mut rng);
        let (a, b) = if c.e1 < c.e2 { (c.e1, c.e2) } else { (c.e2, c.e1) };
        *counts.entry((a, b, c.sign == herds_core::graph::Sign::Plus)).or_default() += 1;
    }
    assert_eq!(counts.len(), 6);
    let observed: Vec<u64> = counts.values().copied().collect();
    assert!(chi_square_gof(&observed, &[1.0 / 6.0; 6]).p_value > 0.001);
}

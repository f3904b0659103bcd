use herds_core::contact::{simulate_contact, ContactParams};
use herds_core::exploration::{simulate_exploration, ExploreEvent, ExploredState, PairedExploration};
use herds_core::graph::{Edge, HalfEdge, HalfEdgeMatching};
use herds_core::seeding::{par_replicas, replica_rng};
use herds_core::stats::{chi_square_gof, ks_two_sample};
use rand::Rng;

#[test]
fn first_event_is_recovery_or_reveal() {
    let lambda = 0.5;
    let p = ContactParams::new(50, 3, lambda, 1.0).unwrap();
    let kinds = par_replicas(1, 100_000, |_, rng| {
        let mut s = ExploredState::initial(50, 3, 0).unwrap();
        match s.step(&p, rng).unwrap().0 {
            ExploreEvent::Recovery(_) => 0usize,
            ExploreEvent::Transmission { revealed: true, .. } => 1,
            other => panic!("impossible first event {other:?}"),
        }
    });
    let rec = kinds.iter().filter(|&&k| k == 0).count() as u64;
    let total = 1.0 + 3.0 * lambda;
    let chi = chi_square_gof(&[rec, kinds.len() as u64 - rec], &[1.0 / total, 3.0 * lambda / total]);
    assert!(chi.p_value > 0.001, "{chi:?}");
}

#[test]
fn first_reveal_partner_is_uniform() {
    // n=4, d=3: the other 11 half-edges are equally likely.
    let p = ContactParams::new(4, 3, 1.0, 0.0).unwrap();
    let partners = par_replicas(2, 110_000, |_, rng| loop {
        let mut s = ExploredState::initial(4, 3, 0).unwrap();
        if let (ExploreEvent::Transmission { from, .. }, _) = s.step(&p, rng).unwrap() {
            let other = s.revealed_partner(from).unwrap();
            // Relabel so that the transmitting half-edge is always 0.
            return (other.0 + 12 - from.0) % 12;
        }
    });
    let mut counts = vec![0u64; 11];
    for q in partners {
        counts[q as usize - 1] += 1;
    }
    let chi = chi_square_gof(&counts, &[1.0 / 11.0; 11]);
    assert!(chi.p_value > 0.001, "{chi:?}");
}

#[test]
fn exploration_infected_count_has_contact_law() {
    let p = ContactParams::new(50, 3, 0.5, 1.0).unwrap();
    let times = [2.0, 5.0];
    let explored = par_replicas(3, 10_000, |_, rng| simulate_exploration(&p, 0, 5.0, &times, rng).unwrap().samples);
    let direct = par_replicas(4, 10_000, |_, rng| simulate_contact(&p, &[0], 5.0, &times, u64::MAX, rng).unwrap().samples);
    for (i, t) in times.iter().enumerate() {
        let a: Vec<f64> = explored.iter().map(|s| s[i].infected as f64).collect();
        let b: Vec<f64> = direct.iter().map(|s| s[i].1 as f64).collect();
        let ks = ks_two_sample(&a, &b);
        assert!(ks.passes(0.01), "t={t} {ks:?}");
    }
}

#[test]
fn paired_exploration_has_standalone_law() {
    let p = ContactParams::new(30, 3, 0.6, 1.0).unwrap();
    let paired = par_replicas(5, 10_000, |_, rng| {
        let g = HalfEdgeMatching::sample_uniform(30, 3, rng).unwrap();
        let mut run = PairedExploration::new(&p, g, 0).unwrap();
        let mut last = run.state().clone();
        while run.step(rng).is_some() {
            if run.time > 2.0 {
                break;
            }
            assert!(run.revealed_edges_present());
            last = run.state().clone();
        }
        (last.infected().len() as f64, last.edges().len() as f64)
    });
    let alone = par_replicas(6, 10_000, |_, rng| {
        let s = &simulate_exploration(&p, 0, 2.0, &[2.0], rng).unwrap().samples[0];
        (s.infected as f64, s.revealed as f64)
    });
    for pick in [|x: &(f64, f64)| x.0, |x: &(f64, f64)| x.1] {
        let a: Vec<f64> = paired.iter().map(pick).collect();
        let b: Vec<f64> = alone.iter().map(pick).collect();
        assert!(ks_two_sample(&a, &b).passes(0.01));
    }
}

fn has_cycle_dfs(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for (i, &(a, b)) in edges.iter().enumerate() {
        adj[a].push((b, i));
        adj[b].push((a, i));
    }
    let mut seen = vec![false; n];
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut stack = vec![(s, usize::MAX)];
        while let Some((v, via)) = stack.pop() {
            if seen[v] {
                return true;
            }
            seen[v] = true;
            for &(w, i) in &adj[v] {
                if i != via {
                    stack.push((w, i));
                }
            }
        }
    }
    false
}

fn random_state<R: Rng>(n: u32, k: usize, rng: &mut R) -> ExploredState {
    let d = 3;
    let mut used = vec![false; (n * d) as usize];
    let mut edges = Vec::new();
    while edges.len() < k {
        let a = rng.random_range(0..n * d);
        let b = rng.random_range(0..n * d);
        if a != b && !used[a as usize] && !used[b as usize] {
            used[a as usize] = true;
            used[b as usize] = true;
            edges.push(Edge::new(HalfEdge(a), HalfEdge(b)));
        }
    }
    let infected: Vec<u32> = (0..n).filter(|_| rng.random::<f64>() < 0.4).collect();
    ExploredState::new(n, d, &infected, &edges).unwrap()
}

#[test]
fn forest_check_agrees_with_dfs() {
    let mut rng = replica_rng(7, 0);
    for _ in 0..3_000 {
        let k = rng.random_range(0..7);
        let s = random_state(8, k, &mut rng);
        let es: Vec<(usize, usize)> = s
            .edges()
            .iter()
            .map(|e| (e.lo.vertex(3) as usize, e.hi.vertex(3) as usize))
            .collect();
        assert_eq!(s.is_forest(), !has_cycle_dfs(8, &es));
    }
}

/// Marked trees of explored components, after pruning healthy leaves, as
/// (adjacency, marks) on local indices.
fn infected_trees(s: &ExploredState) -> Vec<(Vec<Vec<usize>>, Vec<bool>)> {
    let d = 3;
    let verts = s.vertex_set();
    let ix = |u: u32| verts.binary_search(&u).unwrap();
    let mut adj = vec![Vec::new(); verts.len()];
    for e in s.edges() {
        let (a, b) = (ix(e.lo.vertex(d)), ix(e.hi.vertex(d)));
        adj[a].push(b);
        adj[b].push(a);
    }
    let marks: Vec<bool> = verts.iter().map(|&u| s.is_infected(u)).collect();
    let mut alive = vec![true; verts.len()];
    loop {
        let leaf = (0..verts.len()).find(|&v| alive[v] && !marks[v] && adj[v].iter().filter(|&&w| alive[w]).count() <= 1);
        match leaf {
            Some(v) => alive[v] = false,
            None => break,
        }
    }
    let mut seen = vec![false; verts.len()];
    let mut out = Vec::new();
    for s0 in 0..verts.len() {
        if !alive[s0] || seen[s0] {
            continue;
        }
        let mut comp = vec![s0];
        seen[s0] = true;
        let mut i = 0;
        while i < comp.len() {
            for &w in &adj[comp[i]] {
                if alive[w] && !seen[w] {
                    seen[w] = true;
                    comp.push(w);
                }
            }
            i += 1;
        }
        let loc = |g: usize| comp.iter().position(|&c| c == g).unwrap();
        let a: Vec<Vec<usize>> = comp.iter().map(|&g| adj[g].iter().filter(|&&w| alive[w]).map(|&w| loc(w)).collect()).collect();
        out.push((a, comp.iter().map(|&g| marks[g]).collect()));
    }
    out
}

/// Brute-force marked-tree isomorphism by trying all bijections.
fn isomorphic(a: &(Vec<Vec<usize>>, Vec<bool>), b: &(Vec<Vec<usize>>, Vec<bool>)) -> bool {
    let n = a.0.len();
    if n != b.0.len() {
        return false;
    }
    fn extend(i: usize, map: &mut Vec<usize>, used: &mut Vec<bool>, a: &(Vec<Vec<usize>>, Vec<bool>), b: &(Vec<Vec<usize>>, Vec<bool>)) -> bool {
        let n = a.0.len();
        if i == n {
            return true;
        }
        for j in 0..n {
            if used[j] || a.1[i] != b.1[j] || a.0[i].len() != b.0[j].len() {
                continue;
            }
            let ok = (0..i).all(|k| a.0[i].contains(&k) == b.0[j].contains(&map[k]));
            if ok {
                map.push(j);
                used[j] = true;
                if extend(i + 1, map, used, a, b) {
                    return true;
                }
                map.pop();
                used[j] = false;
            }
        }
        false
    }
    extend(0, &mut Vec::new(), &mut vec![false; n], a, b)
}

#[test]
fn psi_codes_identify_exactly_isomorphic_components() {
    let mut rng = replica_rng(8, 0);
    let mut pool = Vec::new();
    while pool.len() < 300 {
        let s = random_state(8, rng.random_range(1..6), &mut rng);
        if s.is_forest() {
            let codes = s.psi().unwrap();
            let trees = infected_trees(&s);
            assert_eq!(codes.len(), trees.len());
            let coded: Vec<_> = trees.iter().map(|t| herds_core::tree_shapes::canonical_code(&t.0, &t.1)).collect();
            let mut sorted = coded.clone();
            sorted.sort();
            assert_eq!(sorted, codes);
            pool.extend(trees.into_iter().zip(coded));
        }
    }
    for i in 0..pool.len() {
        for j in i + 1..pool.len() {
            assert_eq!(pool[i].1 == pool[j].1, isomorphic(&pool[i].0, &pool[j].0), "{:?} {:?}", pool[i], pool[j]);
        }
    }
}

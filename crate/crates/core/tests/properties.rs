use std::sync::Arc;

use proptest::prelude::*;

use leed::dtw::dtw_distance;
use leed::env::{observe_at, AgentSpec, RewardParams, RoadEnv};
use leed::graph::{grid, hilly, Edge, RoadGraph};
use leed::nn::{policy_forward, MlpParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Minimum over every monotone warping path, by explicit recursion.
fn dtw_exhaustive(a: &[(f64, f64)], b: &[(f64, f64)], i: usize, j: usize) -> f64 {
    let here = euclid(a[i], b[j]);
    if i + 1 == a.len() && j + 1 == b.len() {
        return here;
    }
    let mut best = f64::INFINITY;
    if i + 1 < a.len() {
        best = best.min(dtw_exhaustive(a, b, i + 1, j));
    }
    if j + 1 < b.len() {
        best = best.min(dtw_exhaustive(a, b, i, j + 1));
    }
    if i + 1 < a.len() && j + 1 < b.len() {
        best = best.min(dtw_exhaustive(a, b, i + 1, j + 1));
    }
    here + best
}

fn seq() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0i32..9, 0i32..9).prop_map(|(x, y)| (x as f64, y as f64)), 1..6)
}

proptest! {
    #[test]
    fn dtw_matches_enumeration(a in seq(), b in seq()) {
        let d = dtw_distance(&a, &b).unwrap();
        prop_assert!((d - dtw_exhaustive(&a, &b, 0, 0)).abs() < 1e-9);
    }

    #[test]
    fn dtw_is_symmetric_and_zero_on_self(a in seq(), b in seq()) {
        let ab = dtw_distance(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - dtw_distance(&b, &a).unwrap()).abs() < 1e-9);
        prop_assert_eq!(dtw_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn observation_layout(n in 2usize..6, at_raw in 0usize..36, dest_raw in 0usize..36) {
        let g = grid(n, 1.0);
        let nodes = g.node_count();
        let (at, dest) = (at_raw % nodes, dest_raw % nodes);
        let m = g.max_out_degree();
        let obs = observe_at(&g, at, dest, true);
        prop_assert_eq!(obs.features.len(), 2 + 2 * m);
        prop_assert_eq!(obs.mask.len(), m);
        let norm = (nodes - 1) as f64;
        prop_assert_eq!(obs.features[0], at as f64 / norm);
        prop_assert_eq!(obs.features[1], dest as f64 / norm);
        let out: Vec<&Edge> = g.outgoing(at).collect();
        for slot in 0..m {
            let (score, id) = (obs.features[2 + 2 * slot], obs.features[3 + 2 * slot]);
            match out.get(slot) {
                Some(e) => {
                    prop_assert!(obs.mask[slot]);
                    prop_assert_eq!(id, e.to as f64 / norm);
                    prop_assert_eq!(score, g.edge_score(e, dest));
                }
                None => {
                    prop_assert!(!obs.mask[slot]);
                    prop_assert_eq!(score, 0.0);
                    prop_assert_eq!(id, -1.0);
                }
            }
        }
        // slots follow ascending destination id
        prop_assert!(out.windows(2).all(|w| w[0].to < w[1].to));
    }

    #[test]
    fn edge_score_best_slot_is_shortest(at in 0usize..13, dest in 0usize..13) {
        let g = hilly();
        prop_assume!(at != dest && g.distance(at, dest).is_finite());
        let best = g
            .outgoing(at)
            .map(|e| g.edge_score(e, dest))
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(best <= 0.0);
        prop_assert!((best + g.distance(at, dest) / g.diameter()).abs() < 1e-12);
    }

    #[test]
    fn shaping_telescopes(seed in 0u64..500, start in 0usize..16, dest in 0usize..16) {
        prop_assume!(start != dest);
        let g = Arc::new(grid(4, 1.0));
        let reward = RewardParams { time_penalty: 0.0, shaping: 1.0, arrival_bonus: 0.0, congestion: None };
        let spec = AgentSpec { agent_id: 0, start, dest, depart_time: 0 };
        let mut env = RoadEnv::new(g.clone(), vec![spec], reward, 60).unwrap();
        env.reset(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut total = 0.0;
        while !env.episode_done() {
            let valid = env.observation(0).valid_actions();
            let step = env.step(&[rng.gen_range(0..valid)]).unwrap();
            total += step.rewards[0];
        }
        let end = env.state().position[0];
        prop_assert!((total - (g.distance(start, dest) - g.distance(end, dest))).abs() < 1e-9);
    }
}

/// Every simple path by depth-first search.
fn brute_force_shortest(g: &RoadGraph, from: usize, to: usize) -> f64 {
    fn dfs(g: &RoadGraph, at: usize, to: usize, seen: &mut Vec<bool>, len: f64, best: &mut f64) {
        if at == to {
            *best = best.min(len);
            return;
        }
        for e in g.outgoing(at) {
            if !seen[e.to] {
                seen[e.to] = true;
                dfs(g, e.to, to, seen, len + e.length, best);
                seen[e.to] = false;
            }
        }
    }
    let mut seen = vec![false; g.node_count()];
    seen[from] = true;
    let mut best = f64::INFINITY;
    dfs(g, from, to, &mut seen, 0.0, &mut best);
    best
}

#[test]
fn shortest_paths_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let base = grid(3, 1.0);
    let mut graphs = vec![hilly(), grid(4, 1.0)];
    for _ in 0..5 {
        let edges = base
            .edges()
            .iter()
            .map(|e| Edge { length: rng.gen_range(0.1..3.0), ..*e })
            .collect();
        graphs.push(RoadGraph::new(base.coords().to_vec(), edges).unwrap());
    }
    for g in &graphs {
        for a in 0..g.node_count() {
            for b in 0..g.node_count() {
                let expect = brute_force_shortest(g, a, b);
                assert_eq!(g.distance(a, b).is_finite(), expect.is_finite(), "{a}->{b}");
                if let Some(route) = g.shortest_path(a, b) {
                    assert!((route.length - expect).abs() < 1e-9, "{a}->{b}");
                    assert_eq!(g.path_length(&route.path), Some(route.length));
                }
            }
        }
    }
    // corner to corner on the 5×5 fixture is 8 unit edges
    assert_eq!(grid(5, 1.0).distance(0, 24), 8.0);
    assert_eq!(grid(5, 100.0).distance(0, 24), 800.0);
}

#[test]
fn fresh_policy_is_uniform_over_valid_slots() {
    // the centre of a 3×3 grid has four exits; a zero output layer means
    // each should be drawn a quarter of the time
    let g = grid(3, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let net = MlpParams::init(2 + 2 * g.max_out_degree(), g.max_out_degree(), &mut rng);
    let out = policy_forward(&net, &observe_at(&g, 4, 0, true)).unwrap();
    let draws = 8000;
    let mut counts = [0usize; 4];
    for _ in 0..draws {
        counts[out.sample_with(rng.gen::<f64>())] += 1;
    }
    let expected = draws as f64 / 4.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 3 degrees of freedom, p = 0.001
    assert!(chi2 < 16.27, "chi2 {chi2}, counts {counts:?}");

    // a corner has two exits and two masked slots
    let corner = policy_forward(&net, &observe_at(&g, 0, 8, true)).unwrap();
    assert_eq!(corner.probs.iter().filter(|&&p| p > 0.0).count(), 2);
    assert!(corner.probs.iter().filter(|&&p| p > 0.0).all(|&p| (p - 0.5).abs() < 1e-12));
}

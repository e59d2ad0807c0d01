use std::collections::{BTreeSet, HashMap};

use cutbandit::graphs::{self, Label, LabeledGraph};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Minimum cutsize over every labeling with labels {0, 1} that agrees with
/// `observed`, by exhaustive enumeration.
fn brute_force_observable(g: &LabeledGraph, observed: &BTreeSet<usize>) -> usize {
    let labels = g.labels().unwrap();
    let free: Vec<usize> = (1..=g.n()).filter(|v| !observed.contains(v)).collect();
    let mut best = usize::MAX;
    for mask in 0u32..(1 << free.len()) {
        let mut full = labels.to_vec();
        for (bit, &v) in free.iter().enumerate() {
            full[v - 1] = (mask >> bit) & 1;
        }
        let cut = g.edges().iter().filter(|&&(u, v)| full[u - 1] != full[v - 1]).count();
        best = best.min(cut);
    }
    best
}

fn labeled_tree(seed: u64, n: usize, label_count: Label) -> LabeledGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = (0..n).map(|_| rng.gen_range(0..label_count)).collect();
    graphs::random_tree(n, &mut rng).with_labels(labels).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn spine_structure(seed in any::<u64>(), n in 1usize..=64, labels in 1u32..=4) {
        let tree = labeled_tree(seed, n, labels);
        let spine = graphs::euler_spine(&tree).unwrap();
        prop_assert_eq!(spine.length(), 2 * n - 1);
        let visited: BTreeSet<usize> = spine.walk().iter().copied().collect();
        prop_assert_eq!(visited.len(), n);
        let tree_edges: BTreeSet<(usize, usize)> = tree.canonical_edges().into_iter().collect();
        for w in spine.walk().windows(2) {
            prop_assert!(tree_edges.contains(&(w[0].min(w[1]), w[0].max(w[1]))));
        }
        for v in 1..=n {
            let p = spine.position_of(v);
            prop_assert_eq!(spine.walk()[p - 1], v);
            prop_assert!(spine.walk()[..p - 1].iter().all(|&u| u != v));
        }
        prop_assert!(spine.cutsize() <= 2 * graphs::cutsize(&tree).unwrap());
    }

    #[test]
    fn observable_cutsize_matches_brute_force(
        seed in any::<u64>(),
        n in 1usize..=12,
        line in any::<bool>(),
        mask in any::<u16>(),
    ) {
        let g = if line {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            LabeledGraph::line(n, Some((0..n).map(|_| rng.gen_range(0..2)).collect())).unwrap()
        } else {
            labeled_tree(seed, n, 2)
        };
        let observed: BTreeSet<usize> = (1..=n).filter(|v| mask & (1 << (v - 1)) != 0).collect();
        let got = graphs::observable_cutsize(&g, &observed).unwrap();
        prop_assert_eq!(got, brute_force_observable(&g, &observed));
        prop_assert!(got <= graphs::cutsize(&g).unwrap());
        let all: BTreeSet<usize> = (1..=n).collect();
        prop_assert_eq!(graphs::observable_cutsize(&g, &all).unwrap(), graphs::cutsize(&g).unwrap());
    }

    #[test]
    fn wilson_returns_spanning_trees(seed in any::<u64>(), n in 2usize..=30, p in 0.1f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = graphs::random_connected_gnp(n, p, 10_000, &mut rng).unwrap();
        let labels: Vec<Label> = (0..n as u32).collect();
        let g = g.with_labels(labels).unwrap();
        let t = graphs::wilson_ust(&g, &mut rng).unwrap();
        prop_assert!(t.is_tree());
        prop_assert_eq!(t.labels(), g.labels());
        let edges: BTreeSet<(usize, usize)> = g.canonical_edges().into_iter().collect();
        prop_assert!(t.canonical_edges().iter().all(|e| edges.contains(e)));
    }

    #[test]
    fn graph_text_round_trip(seed in any::<u64>(), n in 1usize..=40, labels in 1u32..=5) {
        let g = labeled_tree(seed, n, labels);
        let back: LabeledGraph = g.to_text().parse().unwrap();
        prop_assert_eq!(back, g);
    }
}

#[test]
fn spine_bound_holds_for_every_child_order_of_a_star() {
    // Relabeling the leaves permutes the ascending child order, which covers
    // every DFS order of the star.
    let leaf_labels: [Label; 2] = [1, 0];
    for order in [[2usize, 3], [3, 2]] {
        let mut labels = vec![0; 3];
        for (leaf, &vertex) in order.iter().enumerate() {
            labels[vertex - 1] = leaf_labels[leaf];
        }
        let star = LabeledGraph::new(3, vec![(1, 2), (1, 3)], Some(labels)).unwrap();
        let spine = graphs::euler_spine(&star).unwrap();
        assert_eq!(spine.length(), 5);
        assert!(spine.cutsize() <= 2 * graphs::cutsize(&star).unwrap());
    }
}

#[test]
fn triangle_spanning_trees_are_uniform() {
    let c3 = LabeledGraph::new(3, vec![(1, 2), (2, 3), (1, 3)], None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let draws = 30_000;
    let mut counts: HashMap<Vec<(usize, usize)>, usize> = HashMap::new();
    for _ in 0..draws {
        *counts
            .entry(graphs::wilson_ust(&c3, &mut rng).unwrap().canonical_edges())
            .or_default() += 1;
    }
    assert_eq!(counts.len(), 3);
    let expected = draws as f64 / 3.0;
    let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < ChiSquared::new(2.0).unwrap().inverse_cdf(0.999), "χ² = {chi2}");
}

mod common;

use common::random_tree;
use proptest::prelude::*;
use treemix::data::{
    discretize, split_and_subsample, synth_generate, Dataset, RawTable, SyntheticSpec,
};
use treemix::diagnostics::{cusum, gelman_rubin, rmse, RootSplitStats};
use treemix::model::{log_prior, ModelConfig, MoveProbs};
use treemix::oracle::{conductance, enumerate_states, transition_matrix, DEFAULT_STATE_LIMIT};
use treemix::{FeatureDomain, Move, TreeStructure};

fn domain_strategy() -> impl Strategy<Value = FeatureDomain> {
    prop::collection::vec(1u32..=4, 1..=3).prop_map(|a| FeatureDomain::new(a).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn leaves_partition_the_grid(domain in domain_strategy(), seed in any::<u64>(), grows in 0usize..8) {
        let tree = random_tree(&domain, seed, grows);
        tree.validate(&domain).unwrap();
        let cells = tree.cells(&domain);
        let leaves = tree.leaves();
        let covered: usize = leaves.iter().map(|&l| cells[l].num_points()).sum();
        prop_assert_eq!(covered, domain.grid_size().unwrap());
        for x in domain.grid_points() {
            let owners: Vec<usize> = leaves.iter().copied().filter(|&l| cells[l].contains(&x)).collect();
            prop_assert_eq!(owners.len(), 1);
            prop_assert_eq!(owners[0], tree.leaf_node_of(&x));
        }
    }

    #[test]
    fn grow_then_prune_is_identity(domain in domain_strategy(), seed in any::<u64>(), grows in 0usize..6, pick in any::<prop::sample::Index>()) {
        let tree = random_tree(&domain, seed, grows);
        let options: Vec<(usize, treemix::Split)> = tree
            .leaves()
            .into_iter()
            .flat_map(|l| tree.valid_splits(l, &domain).into_iter().map(move |s| (l, s)))
            .collect();
        prop_assume!(!options.is_empty());
        let (leaf, split) = options[pick.index(options.len())];
        let grown = tree.apply_move(&Move::Grow { leaf, split }, &domain).unwrap();
        let back = grown.apply_move(&Move::Prune { node: leaf }, &domain).unwrap();
        prop_assert_eq!(back, tree);
    }

    #[test]
    fn prune_then_regrow_is_identity(domain in domain_strategy(), seed in any::<u64>(), grows in 1usize..6, pick in any::<prop::sample::Index>()) {
        let tree = random_tree(&domain, seed, grows);
        let prunable = tree.prunable_nodes();
        prop_assume!(!prunable.is_empty());
        let node = prunable[pick.index(prunable.len())];
        let split = tree.split_at(node).unwrap();
        let pruned = tree.apply_move(&Move::Prune { node }, &domain).unwrap();
        let again = pruned.apply_move(&Move::Grow { leaf: node, split }, &domain).unwrap();
        prop_assert_eq!(again, tree);
    }

    #[test]
    fn canonical_key_is_injective(domain in domain_strategy(), s1 in 0u64..40, s2 in 0u64..40, g1 in 0usize..5, g2 in 0usize..5) {
        let a = random_tree(&domain, s1, g1);
        let b = random_tree(&domain, s2, g2);
        prop_assert_eq!(a.canonical_key() == b.canonical_key(), a == b);
    }

    #[test]
    fn gelman_rubin_is_affine_invariant(
        chains in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 12), 2..6),
        c in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0],
        b in -100.0f64..100.0,
        k in -3i32..4,
    ) {
        let r = match gelman_rubin(&chains) { Ok(r) => r, Err(_) => return Ok(()) };
        let moved: Vec<Vec<f64>> = chains.iter().map(|ch| ch.iter().map(|x| c * x + b).collect()).collect();
        let r2 = gelman_rubin(&moved).unwrap();
        prop_assert!((r - r2).abs() <= 1e-9 * r.abs().max(1.0), "{} vs {}", r, r2);
        // power-of-two scaling is exact in floating point
        let p = 2f64.powi(k);
        let scaled: Vec<Vec<f64>> = chains.iter().map(|ch| ch.iter().map(|x| p * x).collect()).collect();
        prop_assert_eq!(gelman_rubin(&scaled).unwrap(), r);
    }

    #[test]
    fn duplicated_chains_give_l_minus_one_over_l(chain in prop::collection::vec(-10.0f64..10.0, 2..40), j in 2usize..9) {
        let chains = vec![chain.clone(); j];
        let l = chain.len() as f64;
        if let Ok(r) = gelman_rubin(&chains) {
            prop_assert!((r - (l - 1.0) / l).abs() < 1e-12);
        }
    }

    #[test]
    fn cusum_ends_at_zero(chain in prop::collection::vec(-10.0f64..10.0, 1..200)) {
        let s = cusum(&chain);
        prop_assert_eq!(s.len(), chain.len());
        prop_assert!(s.last().unwrap().abs() <= 1e-12);
    }

    #[test]
    fn rmse_is_translation_invariant(pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..50), c in -100.0f64..100.0) {
        let (p, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = rmse(&p, &y).unwrap();
        let p2: Vec<f64> = p.iter().map(|v| v + c).collect();
        let y2: Vec<f64> = y.iter().map(|v| v + c).collect();
        prop_assert!((rmse(&p2, &y2).unwrap() - r).abs() < 1e-9);
    }

    #[test]
    fn root_histogram_mass_matches_length(labels in prop::collection::vec(prop::option::of(0usize..4), 0..100)) {
        let s = RootSplitStats::from_labels(&labels);
        prop_assert_eq!(s.histogram.values().sum::<usize>(), labels.len());
        let reference = (1..labels.len()).filter(|&i| labels[i] != labels[i - 1]).count();
        prop_assert_eq!(s.changes, reference);
    }

    #[test]
    fn discretization_is_monotone(values in prop::collection::vec(-50.0f64..50.0, 1..60), bins in 2u32..10) {
        let table = RawTable {
            feature_names: vec!["a".into()],
            features: vec![values.clone()],
            response_name: "y".into(),
            y: vec![0.0; values.len()],
        };
        let data = discretize(&table, bins).unwrap();
        let arity = data.domain().arity()[0];
        prop_assert!(arity >= 1 && arity <= bins);
        for i in 0..values.len() {
            for j in 0..values.len() {
                if values[i] < values[j] {
                    prop_assert!(data.row(i)[0] <= data.row(j)[0]);
                }
                if values[i] == values[j] {
                    prop_assert_eq!(data.row(i)[0], data.row(j)[0]);
                }
            }
        }
    }

    #[test]
    fn split_is_a_partition(n in 2usize..200, frac in 0.01f64..0.9, seed in any::<u64>()) {
        let domain = FeatureDomain::new(vec![1_000]).unwrap();
        let rows: Vec<Vec<u32>> = (1..=n as u32).map(|i| vec![i]).collect();
        let data = Dataset::from_rows(domain, &rows, (0..n).map(|i| i as f64).collect()).unwrap();
        let (train, test) = split_and_subsample(&data, frac, None, seed).unwrap();
        prop_assert_eq!(test.len(), ((n as f64 * frac).floor() as usize).clamp(1, n - 1));
        let mut all: Vec<f64> = train.y().iter().chain(test.y()).copied().collect();
        all.sort_by(f64::total_cmp);
        prop_assert_eq!(all, (0..n).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn synthetic_responses_are_bounded(f0 in prop::collection::vec(-3.0f64..3.0, 4), noise in 0.0f64..2.0, seed in any::<u64>()) {
        let spec = SyntheticSpec::new(FeatureDomain::uniform(2, 2).unwrap(), f0, noise, 300).unwrap();
        let k = spec.bound();
        let data = synth_generate(&spec, seed).unwrap();
        prop_assert!(data.y().iter().all(|y| y.abs() <= k));
    }

    #[test]
    fn conductance_is_symmetric(mask in 1u32..511, seed in 0u64..50, simplified in any::<bool>()) {
        let domain = FeatureDomain::uniform(2, 2).unwrap();
        let states = enumerate_states(&domain, None, DEFAULT_STATE_LIMIT).unwrap();
        let data = common::step_data(2, 2, 30, 0.3, seed);
        let mut cfg = ModelConfig::default();
        if simplified {
            cfg = cfg.with_move_probs(MoveProbs::simplified());
        }
        let spec = transition_matrix(&states, &data, &cfg, &domain).unwrap();
        let s: Vec<usize> = (0..9).filter(|i| mask >> i & 1 == 1).collect();
        let c: Vec<usize> = (0..9).filter(|i| mask >> i & 1 == 0).collect();
        let a = conductance(&spec, &s).unwrap();
        let b = conductance(&spec, &c).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.max(b).max(1e-300), "{} vs {}", a, b);
    }
}

#[test]
fn prior_mass_sums_to_one() {
    for (m, d) in [(2, 1), (2, 2), (3, 1), (3, 2), (2, 3)] {
        let domain = FeatureDomain::uniform(m, d).unwrap();
        let states = enumerate_states(&domain, None, DEFAULT_STATE_LIMIT).unwrap();
        for cfg in [
            ModelConfig::<f64>::default(),
            ModelConfig {
                alpha: 0.5,
                beta: 0.3,
                ..ModelConfig::default()
            },
        ] {
            let total: f64 = states
                .iter()
                .map(|t| log_prior(t, &cfg, &domain).exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-9, "m={m} d={d}: {total}");
        }
    }
}

#[test]
fn trivial_tree_is_a_single_state() {
    let domain = FeatureDomain::uniform(3, 2).unwrap();
    let states = enumerate_states(&domain, None, DEFAULT_STATE_LIMIT).unwrap();
    assert_eq!(
        states
            .iter()
            .filter(|t| **t == TreeStructure::leaf())
            .count(),
        1
    );
}

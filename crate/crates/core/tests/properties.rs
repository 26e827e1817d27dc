mod common;

use aida_core::autodiff::{softmax_rows, Tape, Tensor, MASK_SENTINEL};
use aida_core::data::{
    generate_synthetic, load_jsonl, split_holdout, split_shared_nonshared, subsample_imbalanced, write_jsonl, Dataset,
    Domain, JsonlOptions, PayloadMode, SyntheticSpec,
};
use aida_core::hierarchy::{estimate_parents, hierarchy_penalty_value, LabelTree};
use aida_core::metrics;
use aida_core::nn::{mask_filter, SharedMask};
use aida_core::rewards::{class_reward_batch, final_reward, normalize_example_rewards, Temperature};
use common::*;
use proptest::prelude::*;

fn tree_strategy() -> impl Strategy<Value = LabelTree> {
    (1usize..4, 1usize..4)
        .prop_flat_map(|(g, c)| {
            (
                Just(g),
                Just(c),
                prop::collection::vec(prop::collection::vec(any::<bool>(), c), g),
                prop::collection::vec(1u64..1000, g * c),
                any::<bool>(),
            )
        })
        .prop_filter_map("needs a shared class", |(g, c, mut shared, counts, self_inc)| {
            shared[0][0] = true;
            LabelTree::uniform(g, c, &shared)
                .ok()?
                .with_counts(counts)
                .ok()
                .map(|t| t.with_self_inclusion(self_inc))
        })
}

/// Brute force: every quantity counted directly from the pairs.
fn oracle_macro_f1(pred: &[usize], labels: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    let mut present = 0;
    for c in 0..k {
        let tp = pred.iter().zip(labels).filter(|(p, y)| **p == c && **y == c).count() as f64;
        let fp = pred.iter().zip(labels).filter(|(p, y)| **p == c && **y != c).count() as f64;
        let fn_ = pred.iter().zip(labels).filter(|(p, y)| **p != c && **y == c).count() as f64;
        if labels.contains(&c) {
            present += 1;
            total += if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        }
    }
    total / present as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn class_rewards_sum_to_one(tree in tree_strategy(), raw in prop::collection::vec(0usize..100, 1..40)) {
        let labels: Vec<usize> = raw.iter().map(|i| i % tree.num_leaves()).collect();
        let r = class_reward_batch(&tree, &labels, Temperature::Median).unwrap();
        prop_assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(r.weights.iter().all(|w| *w >= 0.0));
    }

    #[test]
    fn rarer_siblings_earn_larger_class_reward(tree in tree_strategy(), raw in prop::collection::vec(0usize..100, 2..40)) {
        let labels: Vec<usize> = raw.iter().map(|i| i % tree.num_leaves()).collect();
        let r = class_reward_batch(&tree, &labels, Temperature::Median).unwrap();
        for i in 0..labels.len() {
            for j in 0..labels.len() {
                if let (Some(a), Some(b)) = (tree.sparse_size(labels[i]).finite(), tree.sparse_size(labels[j]).finite()) {
                    if a < b {
                        prop_assert!(r.weights[i] >= r.weights[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn normalized_example_rewards_sum_to_one(p in prop::collection::vec(0.0f64..1.0, 1..64)) {
        let r2: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
        let n = normalize_example_rewards(&r2).unwrap();
        prop_assert!((n.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let uniform = vec![1.0 / n.len() as f64; n.len()];
        let b = n.len() as f64;
        for w in final_reward(&uniform, &vec![1.0 / b; n.len()], b * b).unwrap() {
            prop_assert!((w - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, cols in 1usize..8, seed in any::<u64>()) {
        let z = Tensor::matrix(rows, cols, (0..rows * cols).map(|i| ((seed.wrapping_add(i as u64) % 997) as f64 - 498.0) / 7.0).collect()).unwrap();
        let p = softmax_rows(&z).unwrap();
        for r in 0..rows {
            prop_assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn masking_preserves_shared_argmax(
        z in prop::collection::vec(-50.0f64..50.0, 2..12),
        bits in prop::collection::vec(any::<bool>(), 12),
    ) {
        let mut keep: Vec<bool> = bits[..z.len()].to_vec();
        keep[0] = true;
        let mask = SharedMask::new(keep.clone()).unwrap();
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::matrix(1, z.len(), z.clone()).unwrap());
        let m = mask_filter(&mut tape, v, &mask).unwrap();
        let p = tape.softmax(m).unwrap();
        let probs = tape.value(p).row(0).to_vec();
        let best_shared = mask
            .shared_indices()
            .into_iter()
            .fold(None::<usize>, |b, k| match b { Some(j) if z[j] >= z[k] => Some(j), _ => Some(k) })
            .unwrap();
        prop_assert_eq!(aida_core::autodiff::argmax(&probs), best_shared);
        let masked: f64 = (0..z.len()).filter(|&k| !keep[k]).map(|k| probs[k]).sum();
        prop_assert!(masked < 1e-12);
        prop_assert!(MASK_SENTINEL < -1e8);
    }

    #[test]
    fn metrics_match_confusion_oracle(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..80)) {
        let (pred, labels): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        prop_assert_eq!(metrics::macro_f1(&pred, &labels, 5).unwrap(), oracle_macro_f1(&pred, &labels, 5));
        let hits = pred.iter().zip(&labels).filter(|(a, b)| a == b).count();
        prop_assert_eq!(metrics::accuracy(&pred, &labels).unwrap(), hits as f64 / labels.len() as f64);
        let cm = metrics::confusion_matrix(&pred, &labels, 5).unwrap();
        prop_assert_eq!(cm.iter().flatten().sum::<u64>(), labels.len() as u64);
    }

    #[test]
    fn macro_f1_ignores_class_renaming(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60), shift in 1usize..4) {
        let (pred, labels): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let rename = |v: &[usize]| v.iter().map(|c| (c + shift) % 4).collect::<Vec<_>>();
        let a = metrics::macro_f1(&pred, &labels, 4).unwrap();
        let b = metrics::macro_f1(&rename(&pred), &rename(&labels), 4).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn parents_are_child_means(tree in tree_strategy(), seed in any::<u64>()) {
        let k = tree.num_leaves();
        let rows = Tensor::matrix(k, 3, (0..k * 3).map(|i| ((seed ^ (i as u64 * 2654435761)) % 1000) as f64 / 100.0 - 5.0).collect()).unwrap();
        let est = estimate_parents(&rows, &tree).unwrap();
        prop_assert_eq!(&est.vectors, &parent_means(&rows, &tree));
        let h = hierarchy_penalty_value(&rows, &est, &tree).unwrap();
        prop_assert!(h >= 0.0);
        prop_assert!((h - penalty_against(&rows, &est.vectors, &tree)).abs() <= 1e-12 * (1.0 + h));
    }

    #[test]
    fn splits_partition_the_source(tree in tree_strategy(), per_class in 1usize..8, frac in 0.0f64..1.0, seed in any::<u64>()) {
        let centers: Vec<Vec<f64>> = (0..tree.num_leaves()).map(|k| vec![k as f64]).collect();
        let data = blobs(&centers, per_class, 0.1, Domain::Source, true, seed);
        let (shared, all) = split_shared_nonshared(&data, &tree);
        prop_assert_eq!(&all, &data);
        prop_assert!(shared.examples.iter().all(|e| tree.shared().is_shared(e.label.unwrap())));
        let n_shared = data.examples.iter().filter(|e| tree.shared().is_shared(e.label.unwrap())).count();
        prop_assert_eq!(shared.len(), n_shared);

        let (rest, held) = split_holdout(&data, frac, seed).unwrap();
        prop_assert_eq!(rest.len() + held.len(), data.len());
        let mut seen: Vec<_> = rest.examples.iter().chain(&held.examples).map(|e| format!("{e:?}")).collect();
        let mut orig: Vec<_> = data.examples.iter().map(|e| format!("{e:?}")).collect();
        seen.sort();
        orig.sort();
        prop_assert_eq!(seen, orig);
    }

    #[test]
    fn caps_bound_class_counts(per_class in 1usize..20, cap in 1usize..25, seed in any::<u64>()) {
        let tree = LabelTree::uniform(2, 2, &[vec![true, false], vec![true, false]]).unwrap();
        let centers: Vec<Vec<f64>> = (0..4).map(|k| vec![k as f64]).collect();
        let data = blobs(&centers, per_class, 0.1, Domain::Source, true, seed);
        let caps = vec![Some(cap), None, Some(cap), None];
        let out = subsample_imbalanced(&data, &tree, &caps, seed).unwrap();
        let counts = out.class_counts(4);
        prop_assert_eq!(counts[0] as usize, per_class.min(cap));
        prop_assert_eq!(counts[1] as usize, per_class);
    }

    #[test]
    fn jsonl_round_trip(per_class in 1usize..5, seed in any::<u64>()) {
        let tree = LabelTree::uniform(2, 2, &[vec![true, false], vec![false, true]]).unwrap();
        let centers: Vec<Vec<f64>> = (0..4).map(|k| vec![k as f64, -(k as f64), 0.5]).collect();
        let source = blobs(&centers, per_class, 1.3, Domain::Source, true, seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_jsonl(&path, &source, &tree, None).unwrap();
        let (back, vocab) = load_jsonl(&path, &tree, &JsonlOptions::default()).unwrap();
        prop_assert!(vocab.is_none());
        prop_assert_eq!(back, source);
    }
}

fn small_spec(per_class: usize, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        groups: 2,
        children: 2,
        shared: vec![true, false, true, false],
        source_per_class: per_class,
        target_per_class: 10,
        payload: PayloadMode::Vector {
            input_dim: 4,
            informative_dim: None,
        },
        parent_scale: 2.0,
        child_scale: 0.5,
        noise: 0.7,
        translation: 1.0,
        rotation: 0.3,
        seed,
    }
}

#[test]
fn synthetic_class_means_match_centres() {
    let n = 10_000;
    let data = generate_synthetic(&small_spec(n, 3)).unwrap();
    let geometry = data.geometry.unwrap();
    let sigma = geometry.noise;
    for (k, center) in geometry.class_centers.iter().enumerate() {
        let rows: Vec<Vec<f64>> = rows_of(&data.source.examples.iter().filter(|e| e.label == Some(k)).collect::<Vec<_>>());
        assert_eq!(rows.len(), n);
        for (j, c) in center.iter().enumerate() {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            assert!((mean - c).abs() < 3.0 * sigma / (n as f64).sqrt() + 1e-12, "class {k} dim {j}: {mean} vs {c}");
        }
    }
}

#[test]
fn siblings_sit_closer_than_cousins() {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let (mut within, mut across, mut nw, mut na) = (0.0, 0.0, 0, 0);
    for seed in 0..50 {
        let g = generate_synthetic(&small_spec(1, seed)).unwrap().geometry.unwrap();
        for (k, ck) in g.class_centers.iter().enumerate() {
            for (j, cj) in g.class_centers.iter().enumerate().skip(k + 1) {
                if k / 2 == j / 2 {
                    within += dist(ck, cj);
                    nw += 1;
                } else {
                    across += dist(ck, cj);
                    na += 1;
                }
            }
        }
    }
    assert!(within / nw as f64 * 4.0 < across / na as f64);
}

#[test]
fn target_keeps_only_shared_classes() {
    let data = generate_synthetic(&small_spec(5, 9)).unwrap();
    assert!(data
        .target
        .examples
        .iter()
        .all(|e| data.tree.shared().is_shared(e.label.unwrap())));
    let ds: Dataset = data.target.without_labels();
    assert!(ds.examples.iter().all(|e| e.label.is_none()));
}

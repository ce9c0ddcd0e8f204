mod common;

use common::random_dataset;
use proptest::prelude::*;
use rts_core::features::{extract_features, FeatureMatrix, FeatureScope, SparseVec};
use rts_core::ranker::{
    loss_and_gradient, rank_with_matrix, train, train_traced, Label, LabelEntry, LabelSet,
    RankedSuite, Role, TrainConfig,
};
use rts_core::rng::Lcg64;
use std::collections::BTreeSet;

/// Random labels on the first `k` tests, with both classes present.
fn random_labels(m: &FeatureMatrix, seed: u64, k: usize) -> LabelSet {
    let mut rng = Lcg64::new(seed);
    let k = k.clamp(2, m.test_ids.len());
    let entries = m.test_ids[..k]
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let label = match i {
                0 => Label::In,
                1 => Label::Out,
                _ if rng.chance(0.5) => Label::In,
                _ => Label::Out,
            };
            LabelEntry::new(id.clone(), label, Role::Training)
        })
        .collect();
    LabelSet::new(entries).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn loss_trace_never_increases(seed in any::<u64>(), n in 2usize..30, lr in 0.01f64..50.0) {
        let d = random_dataset(seed, n);
        let m = extract_features(&d, &FeatureScope::all(d.releases[0].clone())).unwrap();
        let labels = random_labels(&m, seed ^ 1, n);
        let cfg = TrainConfig { learning_rate: lr, max_epochs: 200, ..TrainConfig::default() };
        let trace = train_traced(&m, &labels, &cfg).unwrap();
        for w in trace.losses.windows(2) {
            prop_assert!(w[1] <= w[0], "loss rose from {} to {}", w[0], w[1]);
        }
        prop_assert_eq!(trace.losses.last().copied(), Some(trace.model.training_meta.final_loss));
    }

    #[test]
    fn training_is_deterministic(seed in any::<u64>(), n in 2usize..20) {
        let d = random_dataset(seed, n);
        let m = extract_features(&d, &FeatureScope::all(d.releases[0].clone())).unwrap();
        let labels = random_labels(&m, seed, n);
        let cfg = TrainConfig::default();
        prop_assert_eq!(train(&m, &labels, &cfg).unwrap(), train(&m, &labels, &cfg).unwrap());
    }

    #[test]
    fn weight_norm_bounded_by_start_loss(seed in any::<u64>(), n in 2usize..30, l2 in 1e-3f64..1.0) {
        let d = random_dataset(seed, n);
        let m = extract_features(&d, &FeatureScope::all(d.releases[0].clone())).unwrap();
        let labels = random_labels(&m, seed, n);
        let cfg = TrainConfig { l2_lambda: l2, learning_rate: 1.0, max_epochs: 300, ..TrainConfig::default() };
        let model = train(&m, &labels, &cfg).unwrap();
        let norm2: f64 = model.weights.iter().map(|w| w * w).sum();
        prop_assert!(norm2 <= 2.0 * std::f64::consts::LN_2 / l2 + 1e-12);
    }

    #[test]
    fn ranking_follows_logits(seed in any::<u64>(), n in 3usize..30) {
        let d = random_dataset(seed, n);
        let m = extract_features(&d, &FeatureScope::all(d.releases[0].clone())).unwrap();
        let labels = random_labels(&m, seed, n / 2 + 1);
        let model = train(&m, &labels, &TrainConfig::default()).unwrap();
        let training = labels.training_ids();
        let suite = rank_with_matrix(&model, &m, &d, &training).unwrap();
        prop_assert_eq!(suite.len(), n - training.len());
        let logit = |id: &str| model.logit(m.row_of(id).unwrap()).unwrap();
        for (i, e) in suite.entries.iter().enumerate() {
            prop_assert_eq!(e.rank, i + 1);
            prop_assert!(!training.contains(&e.test_id));
        }
        for w in suite.entries.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
            if w[0].score == w[1].score {
                prop_assert!(w[0].test_id < w[1].test_id);
            } else {
                prop_assert!(logit(&w[0].test_id) > logit(&w[1].test_id));
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences(seed in any::<u64>(), dim in 1usize..6, n in 1usize..10) {
        let mut rng = Lcg64::new(seed);
        let rows: Vec<SparseVec> = (0..n)
            .map(|_| SparseVec::from_dense(&(0..dim).map(|_| rng.unit() * 2.0 - 1.0).collect::<Vec<_>>()))
            .collect();
        let y: Vec<f64> = (0..n).map(|_| if rng.chance(0.5) { 1.0 } else { 0.0 }).collect();
        let w: Vec<f64> = (0..dim).map(|_| rng.unit() - 0.5).collect();
        let g = loss_and_gradient(&w, 0.1, &rows, &y, 0.01).unwrap();
        let h = 1e-5;
        for i in 0..dim {
            let mut p = w.clone();
            let mut q = w.clone();
            p[i] += h;
            q[i] -= h;
            let fd = (loss_and_gradient(&p, 0.1, &rows, &y, 0.01).unwrap().loss
                - loss_and_gradient(&q, 0.1, &rows, &y, 0.01).unwrap().loss) / (2.0 * h);
            prop_assert!((fd - g.gradient[i]).abs() < 1e-7);
        }
    }

    /// Points on a ray with labels split by position: any model that learns
    /// a positive direction ranks them by position, at every feature scale.
    #[test]
    fn common_scaling_keeps_the_ranking(
        seed in any::<u64>(),
        n in 6usize..20,
        dim in 1usize..4,
        scale in prop_oneof![Just(0.25), Just(3.0), Just(20.0)],
    ) {
        let mut rng = Lcg64::new(seed);
        let direction: Vec<f64> = (0..dim).map(|_| 0.5 + rng.unit()).collect();
        let mut positions: Vec<f64> = (0..n).map(|i| i as f64 / n as f64 + 0.01).collect();
        rng.shuffle(&mut positions);
        let ids: Vec<String> = (0..n).map(|i| format!("P{i:02}")).collect();
        let cfg = TrainConfig { l2_lambda: 0.0, learning_rate: 1.0, max_epochs: 3000, ..TrainConfig::default() };
        let ranking = |c: f64| {
            let rows: Vec<SparseVec> = positions
                .iter()
                .map(|t| SparseVec::from_dense(&direction.iter().map(|v| c * t * v).collect::<Vec<_>>()))
                .collect();
            let m = FeatureMatrix {
                scope: FeatureScope::all("r1"),
                test_ids: ids.clone(),
                column_names: (0..dim).map(|i| format!("f{i}")).collect(),
                rows,
                vocabulary: None,
                numeric: vec![],
                tag_columns: None,
            };
            let labels = LabelSet::new(
                ids.iter()
                    .zip(&positions)
                    .map(|(id, t)| LabelEntry::new(id.clone(), if *t > 0.5 { Label::In } else { Label::Out }, Role::Training))
                    .collect(),
            )
            .unwrap();
            let model = train(&m, &labels, &cfg).unwrap();
            let mut scored: Vec<(String, f64)> = ids
                .iter()
                .zip(&m.rows)
                .map(|(id, r)| (id.clone(), model.logit(r).unwrap()))
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1));
            scored.into_iter().map(|(id, _)| id).collect::<Vec<_>>()
        };
        prop_assert_eq!(ranking(1.0), ranking(scale));
    }

    #[test]
    fn suite_json_round_trips(seed in any::<u64>(), n in 3usize..30) {
        let d = random_dataset(seed, n);
        let m = extract_features(&d, &FeatureScope::all(d.releases[0].clone())).unwrap();
        let labels = random_labels(&m, seed, n / 2 + 1);
        let model = train(&m, &labels, &TrainConfig::default()).unwrap();
        let suite = rank_with_matrix(&model, &m, &d, &BTreeSet::new()).unwrap();
        let back: RankedSuite = serde_json::from_str(&serde_json::to_string(&suite).unwrap()).unwrap();
        prop_assert_eq!(back, suite);
        let back_model: rts_core::ranker::RankModel =
            serde_json::from_str(&serde_json::to_string(&model).unwrap()).unwrap();
        prop_assert_eq!(back_model, model);
    }
}

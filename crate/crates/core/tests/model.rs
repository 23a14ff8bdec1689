use std::collections::{BTreeMap, BTreeSet};

use matprint_core::fingerprint::Values;
use matprint_core::model::checkpoint;
use matprint_core::model::mlp::finite_difference_error;
use matprint_core::model::{
    augment_indices, gradient_check, knn_predict, mlp_forward, mlp_train, predict_values, stratified_split,
    AugmentationPolicy, MlpModel, MlpSpec, TrainConfig, VariantInfo,
};
use matprint_core::MaterialId;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_data(rng: &mut impl Rng, n: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<Values>) {
    let xs = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let ys = (0..n).map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0))).collect();
    (xs, ys)
}

/// Forward pass written with explicit index loops.
fn forward_oracle(model: &MlpModel, x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let last = model.layers.len() - 1;
    for (l, layer) in model.layers.iter().enumerate() {
        let mut out = vec![0.0; layer.out_dim];
        for o in 0..layer.out_dim {
            let mut s = layer.bias[o];
            for i in 0..layer.in_dim {
                s += layer.weights[o * layer.in_dim + i] * a[i];
            }
            out[o] = if l < last { s.max(0.0) } else { s };
        }
        a = out;
    }
    a
}

#[test]
fn gradient_check_on_statistical_spec() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (xs, ys) = random_data(&mut rng, 20, 28);
    let model = MlpModel::init(&MlpSpec::statistical(), 3);
    let err = gradient_check(&model, &xs, &ys, 1e-6).unwrap();
    assert!(err < 1e-4, "relative error {err}");

    let (_, mut grads) = model.loss_and_gradient(&xs, &ys).unwrap();
    for (w, b) in &mut grads.layers {
        w.iter_mut().chain(b.iter_mut()).for_each(|g| *g = -*g);
    }
    assert!(finite_difference_error(&model, &xs, &ys, &grads, 1e-6) > 0.1);
}

#[test]
fn forward_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (seed, dims) in [(1, vec![28, 16, 16, 16]), (2, vec![5, 16]), (3, vec![7, 3, 9, 4, 16])] {
        let model = MlpModel::init(&MlpSpec::new(dims.clone()).unwrap(), seed);
        for _ in 0..10 {
            let x: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
            let got = mlp_forward(&model, &x).unwrap();
            let want = forward_oracle(&model, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
            let clamped = predict_values(&model, &x).unwrap();
            for (c, g) in clamped.iter().zip(&got) {
                assert_eq!(*c, g.clamp(-1.0, 1.0));
            }
        }
    }
}

#[test]
fn init_is_seeded() {
    let a = MlpModel::init(&MlpSpec::statistical(), 9);
    assert_eq!(a, MlpModel::init(&MlpSpec::statistical(), 9));
    assert_ne!(a, MlpModel::init(&MlpSpec::statistical(), 10));
}

#[test]
fn training_is_bit_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (xs, _) = random_data(&mut rng, 40, 6);
    let ys: Vec<Values> = xs
        .iter()
        .map(|x| std::array::from_fn(|a| (0.5 * x[a % 6] - 0.3 * x[(a + 1) % 6]).tanh()))
        .collect();
    let config = TrainConfig {
        max_epochs: 60,
        seed: 4,
        ..TrainConfig::default()
    };
    let spec = MlpSpec::new(vec![6, 12, 16]).unwrap();
    let a = mlp_train(&spec, &xs, &ys, &config).unwrap();
    let b = mlp_train(&spec, &xs, &ys, &config).unwrap();
    assert_eq!(a.params(), b.params());
    assert_eq!(a.summary, b.summary);
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.mfm");
    let mut model = MlpModel::init(&MlpSpec::statistical(), 5);
    model.round_to_storage();
    model.feature_spec_id = "S-v1".into();
    let mut extra = BTreeMap::new();
    extra.insert("note".to_string(), serde_json::json!("kept"));
    checkpoint::save(&model, extra, &path).unwrap();
    let (back, header) = checkpoint::load(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(header.extra["note"], "kept");
    let missing = checkpoint::load(dir.path().join("absent.mfm")).unwrap_err();
    assert_eq!(missing.exit_code(), 2);
}

/// Inverse-distance weighting over an exhaustive sort of all training rows.
fn knn_oracle(train: &[Vec<f64>], fps: &[Values], q: &[f64], k: usize) -> (Vec<usize>, Vec<f64>, Values) {
    let mut d: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, f)| (f.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(), i))
        .collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let near = &d[..k];
    let inv: Vec<f64> = near.iter().map(|(dist, _)| 1.0 / dist).collect();
    let total: f64 = inv.iter().sum();
    let weights: Vec<f64> = inv.iter().map(|w| w / total).collect();
    let mut values = [0.0; 16];
    for ((_, i), w) in near.iter().zip(&weights) {
        for a in 0..16 {
            values[a] += w * fps[*i][a];
        }
    }
    (near.iter().map(|(_, i)| *i).collect(), weights, values)
}

#[test]
fn knn_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..50 {
        let (train, fps) = random_data(&mut rng, 50, 8);
        let q: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        for k in [1, 2, 5] {
            let got = knn_predict(&train, &fps, &q, k).unwrap();
            let (idx, weights, values) = knn_oracle(&train, &fps, &q, k);
            assert_eq!(got.neighbors.iter().map(|n| n.index).collect::<Vec<_>>(), idx);
            for (n, w) in got.neighbors.iter().zip(&weights) {
                assert!((n.weight - w).abs() < 1e-9);
            }
            for (g, w) in got.values.iter().zip(&values) {
                assert!((g - w).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn knn_exact_match_and_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let (train, fps) = random_data(&mut rng, 20, 4);
    for i in 0..20 {
        let p = knn_predict(&train, &fps, &train[i], 2).unwrap();
        for (a, b) in p.values.iter().zip(&fps[i]) {
            assert!((a - b).abs() < 1e-6);
        }
    }
    assert!(knn_predict(&train, &fps, &train[0], 0).is_err());
    assert!(knn_predict(&train, &fps, &train[0], 21).is_err());
    assert!(knn_predict(&train, &fps, &[0.0; 3], 2).is_err());
}

#[test]
fn split_is_stratified_and_seeded() {
    let cats = ["fabric", "wood", "metal", "glass"];
    let materials: Vec<(MaterialId, String)> = (0..100)
        .map(|i| (MaterialId::new(format!("m{i:03}")), cats[i % 4].to_string()))
        .chain(std::iter::once((MaterialId::new("lonely"), "sand".to_string())))
        .collect();
    let (split, warnings) = stratified_split(&materials, 0.2, 7).unwrap();
    assert_eq!(split.test_ids.len(), 20);
    assert_eq!(split.train_ids.len(), 81);
    assert_eq!(warnings.len(), 1);
    assert!(split.train_ids.contains(&MaterialId::new("lonely")));
    let train: BTreeSet<_> = split.train_ids.iter().collect();
    assert!(split.test_ids.iter().all(|id| !train.contains(id)));
    for cat in cats {
        let n = split
            .test_ids
            .iter()
            .filter(|id| materials.iter().any(|(m, c)| m == *id && c == cat))
            .count();
        assert_eq!(n, 5);
    }
    assert_eq!(stratified_split(&materials, 0.2, 7).unwrap().0, split);
    assert_ne!(stratified_split(&materials, 0.2, 8).unwrap().0, split);
    assert!(stratified_split(&materials, 1.0, 7).is_err());
}

#[test]
fn azimuth_variants_respect_jitter_bound() {
    let variants: Vec<VariantInfo> = [("canonical", 56), ("az+1", 57), ("az-2", 54), ("az+3", 59)]
        .iter()
        .map(|(t, f)| VariantInfo {
            tag: t.to_string(),
            frame_indices: Some([30, *f]),
        })
        .collect();
    let mats = vec![variants; 4];
    let mut seen = BTreeSet::new();
    for epoch in 0..200 {
        let (idx, _) = augment_indices(&AugmentationPolicy::statistical(), 1, epoch, &mats).unwrap();
        seen.extend(idx);
    }
    assert_eq!(seen, BTreeSet::from([0, 1, 2]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradients_agree_with_differences(seed in any::<u64>(), hidden in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (xs, ys) = random_data(&mut rng, 6, 5);
        let model = MlpModel::init(&MlpSpec::new(vec![5, hidden, 16]).unwrap(), seed);
        prop_assert!(gradient_check(&model, &xs, &ys, 1e-6).unwrap() < 1e-4);
    }

    #[test]
    fn clamping_preserves_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = MlpModel::init(&MlpSpec::new(vec![3, 8, 16]).unwrap(), seed);
        for l in &mut model.layers {
            l.weights.iter_mut().for_each(|w| *w *= 4.0);
        }
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let raw = mlp_forward(&model, &x).unwrap();
        let clamped = predict_values(&model, &x).unwrap();
        for i in 0..16 {
            for j in 0..16 {
                if raw[i] <= raw[j] {
                    prop_assert!(clamped[i] <= clamped[j]);
                }
            }
        }
    }
}

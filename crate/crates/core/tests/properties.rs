use bat_core::data::{
    compose_epoch_for_labels, generate_synthetic, induce_sparsity, split, SignalMode, SplitSpec, SyntheticSpec,
};
use bat_core::embedding::{temporal_encoding, TemporalEncodingConfig};
use bat_core::numerics::{PoolMode, Tape, Tensor};
use proptest::prelude::*;

fn finite_tensor(shape: Vec<usize>, range: f64) -> impl Strategy<Value = Tensor> {
    let n: usize = shape.iter().product();
    prop::collection::vec(-range..range, n).prop_map(move |v| Tensor::new(shape.clone(), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_slices_sum_to_one(x in finite_tensor(vec![3, 7], 700.0)) {
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let s = tape.softmax(v, 1).unwrap();
        for row in tape.value(s).data().chunks(7) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_centres_each_slice(x in finite_tensor(vec![4, 6], 50.0)) {
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let g = tape.constant(Tensor::full(&[6], 1.0));
        let b = tape.constant(Tensor::zeros(&[6]));
        let y = tape.layer_norm(v, g, b).unwrap();
        for row in tape.value(y).data().chunks(6) {
            prop_assert!((row.iter().sum::<f64>() / 6.0).abs() < 1e-10);
        }
    }

    #[test]
    fn pooling_ignores_masked_entries(
        x in finite_tensor(vec![2, 4, 3, 2], 10.0),
        junk in finite_tensor(vec![2, 4, 3, 2], 1e6),
        bits in prop::collection::vec(any::<bool>(), 24),
    ) {
        let mut mask: Vec<f64> = bits.iter().map(|&b| f64::from(u8::from(b))).collect();
        mask[0] = 1.0;
        mask[12] = 1.0;
        let mask = Tensor::new(vec![2, 4, 3], mask).unwrap();
        let mut fuzzed = x.clone();
        for (i, v) in fuzzed.data_mut().iter_mut().enumerate() {
            if mask.data()[i / 2] == 0.0 {
                *v = junk.data()[i];
            }
        }
        for mode in [PoolMode::Mean, PoolMode::Max] {
            let pool = |t: &Tensor| {
                let mut tape = Tape::new();
                let v = tape.constant(t.clone());
                let p = tape.masked_pool(v, &mask, &[1, 2], mode).unwrap();
                tape.value(p).clone()
            };
            let (a, b) = (pool(&x), pool(&fuzzed));
            match mode {
                PoolMode::Max => prop_assert_eq!(a, b),
                PoolMode::Mean => prop_assert!(a.data().iter().zip(b.data()).all(|(p, q)| (p - q).abs() < 1e-12)),
            }
        }
    }

    #[test]
    fn dropout_is_a_function_of_its_seed(x in finite_tensor(vec![5, 5], 3.0), seed in any::<u64>()) {
        let run = || {
            let mut tape = Tape::training(seed);
            let v = tape.constant(x.clone());
            let d = tape.dropout(v, 0.4).unwrap();
            tape.value(d).clone()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn resampled_epochs_triple_each_positive(labels in prop::collection::vec(0usize..2, 2..80), seed in any::<u64>()) {
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let epoch = compose_epoch_for_labels(&labels, seed).unwrap();
        let positives = labels.iter().filter(|&&y| y == 1).count();
        prop_assert_eq!(epoch.len(), 6 * positives);
        for (i, &y) in labels.iter().enumerate() {
            let count = epoch.iter().filter(|&&j| j == i).count();
            if y == 1 {
                prop_assert_eq!(count, 3);
            }
        }
        prop_assert_eq!(epoch.iter().filter(|&&j| labels[j] == 0).count(), 3 * positives);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sparsity_is_one_minus_mask_density(n in 10usize..40, t in 4usize..10, d in 2usize..6, p in 0.0f64..0.6, seed in any::<u64>()) {
        let ds = generate_synthetic(&SyntheticSpec::new(SignalMode::DenseMulticlass, n, t, d, 0.0, seed).with_classes(3).with_noise(1.0)).unwrap();
        let ds = induce_sparsity(&ds, p, seed).unwrap();
        let ones: usize = ds.samples.iter().map(|s| s.derive_mask().iter().map(|&m| usize::from(m)).sum::<usize>()).sum();
        prop_assert_eq!(ds.sparsity(), 1.0 - ones as f64 / ds.total_cells() as f64);
    }

    #[test]
    fn removal_is_nested_across_levels(seed in any::<u64>(), a in 0.0f64..0.9, b in 0.0f64..0.9) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let raw = generate_synthetic(&SyntheticSpec::new(SignalMode::DenseMulticlass, 20, 6, 4, 0.0, 3).with_classes(2).with_noise(1.0)).unwrap();
        let x = induce_sparsity(&raw, lo, seed).unwrap();
        let y = induce_sparsity(&raw, hi, seed).unwrap();
        for ((r, s), u) in raw.samples.iter().zip(&x.samples).zip(&y.samples) {
            for c in 0..r.values.len() {
                prop_assert!(!u.values[c].is_nan() <= !s.values[c].is_nan());
                prop_assert!(!s.values[c].is_nan() <= !r.values[c].is_nan());
                if !u.values[c].is_nan() {
                    prop_assert_eq!(u.values[c], r.values[c]);
                }
            }
        }
    }

    #[test]
    fn split_partitions_and_fits_on_train(n in 10usize..120, seed in any::<u64>(), rep in 0usize..5) {
        let raw = generate_synthetic(&SyntheticSpec::new(SignalMode::DenseMulticlass, n, 4, 3, 0.0, 1).with_classes(2).with_noise(1.0)).unwrap();
        let data = split(&raw, &SplitSpec::new(seed, rep)).unwrap();
        let (tr, va, te) = &data.indices;
        let mut all: Vec<usize> = tr.iter().chain(va).chain(te).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let refit = raw.subset(tr).fit_standardization().unwrap();
        prop_assert_eq!(&refit, &data.stats);
        prop_assert_eq!(data.validation.stats.as_ref(), Some(&data.stats));
        prop_assert_eq!(data.test.stats.as_ref(), Some(&data.stats));
    }
}

#[test]
fn temporal_encoding_is_injective_on_a_fine_grid() {
    for dim in [4, 8, 16] {
        let max_time = 50.0;
        let cfg = TemporalEncodingConfig::new(dim, max_time).unwrap();
        let grid: Vec<Vec<f64>> = (0..=500).map(|k| temporal_encoding(k as f64 * 0.1, &cfg)).collect();
        for i in 0..grid.len() {
            for j in i + 1..grid.len() {
                let dist = grid[i].iter().zip(&grid[j]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(dist > 1e-9, "dim {dim}: t={} and t={} collide", i as f64 * 0.1, j as f64 * 0.1);
            }
        }
    }
}

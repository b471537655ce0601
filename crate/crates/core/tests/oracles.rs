use std::collections::HashMap;

use bat_core::data::{
    class_templates, generate_synthetic, generate_with_factors, min_pairwise_distance, split, Batch, Dataset, SignalMode,
    SplitSpec, SyntheticSpec,
};
use bat_core::train::auroc;

/// Full-batch logistic regression by gradient descent.
struct Logistic {
    w: Vec<f64>,
    b: f64,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Logistic {
    fn fit(x: &[Vec<f64>], y: &[bool]) -> Logistic {
        let (n, k) = (x.len(), x[0].len());
        let mut m = Logistic { w: vec![0.0; k], b: 0.0 };
        for _ in 0..400 {
            let mut gw = vec![0.0; k];
            let mut gb = 0.0;
            for (row, &label) in x.iter().zip(y) {
                let err = m.score(row) - f64::from(u8::from(label));
                gb += err;
                for (g, v) in gw.iter_mut().zip(row) {
                    *g += err * v;
                }
            }
            m.b -= 0.5 * gb / n as f64;
            for (w, g) in m.w.iter_mut().zip(&gw) {
                *w -= 0.5 * (g / n as f64 + 1e-3 * *w);
            }
        }
        m
    }

    fn score(&self, row: &[f64]) -> f64 {
        sigmoid(self.b + self.w.iter().zip(row).map(|(w, v)| w * v).sum::<f64>())
    }
}

/// Flattened model inputs: `(mask rows, value rows, labels)`.
fn features(ds: &Dataset) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<bool>) {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let batch = Batch::from_dataset(ds, &idx).unwrap();
    let width = batch.t * batch.d;
    let rows = |t: &bat_core::numerics::Tensor| t.data().chunks(width).map(<[f64]>::to_vec).collect::<Vec<_>>();
    (rows(&batch.mask), rows(&batch.values), batch.labels.iter().map(|&l| l == 1).collect())
}

#[test]
fn mask_only_signal_lives_in_the_mask() {
    let raw = generate_synthetic(&SyntheticSpec::new(SignalMode::MaskOnly, 2000, 16, 8, 0.5, 11)).unwrap();
    let data = split(&raw, &SplitSpec::new(0, 0)).unwrap();
    let (m_train, v_train, y_train) = features(&data.train);
    let (m_test, v_test, y_test) = features(&data.test);

    let on_mask = Logistic::fit(&m_train, &y_train);
    let correct = m_test.iter().zip(&y_test).filter(|(r, &y)| (on_mask.score(r) > 0.5) == y).count();
    let accuracy = correct as f64 / y_test.len() as f64;
    assert!(accuracy > 0.95, "mask accuracy {accuracy}");

    let on_values = Logistic::fit(&v_train, &y_train);
    let scores: Vec<f64> = v_test.iter().map(|r| on_values.score(r)).collect();
    let a = auroc(&scores, &y_test).unwrap();
    assert!((a - 0.5).abs() < 0.1, "values AUROC {a}");
    let majority = y_test.iter().filter(|&&y| !y).count() as f64 / y_test.len() as f64;
    let correct = scores.iter().zip(&y_test).filter(|(s, &y)| (**s > 0.5) == y).count();
    assert!(correct as f64 / y_test.len() as f64 <= majority + 0.03);
}

fn entropy<K: std::hash::Hash + Eq>(keys: impl Iterator<Item = K>) -> f64 {
    let mut counts: HashMap<K, usize> = HashMap::new();
    let mut n = 0;
    for k in keys {
        *counts.entry(k).or_default() += 1;
        n += 1;
    }
    counts.values().map(|&c| c as f64 / n as f64).map(|p| -p * p.log2()).sum()
}

/// Plug-in estimate of `I(label; key)` in bits.
fn mutual_information<K: std::hash::Hash + Eq + Copy>(labels: &[usize], keys: &[K]) -> f64 {
    entropy(labels.iter().copied()) + entropy(keys.iter().copied()) - entropy(labels.iter().copied().zip(keys.iter().copied()))
}

#[test]
fn cross_axis_label_needs_both_factors() {
    let (ds, factors) = generate_with_factors(&SyntheticSpec::new(SignalMode::CrossAxis, 4000, 16, 8, 0.5, 12)).unwrap();
    let labels = ds.labels();
    let value: Vec<bool> = factors.iter().map(|f| f.value_high).collect();
    let late: Vec<bool> = factors.iter().map(|f| f.late_observed).collect();
    let joint: Vec<(bool, bool)> = value.iter().copied().zip(late.iter().copied()).collect();
    let (iv, il, ij) = (mutual_information(&labels, &value), mutual_information(&labels, &late), mutual_information(&labels, &joint));
    assert!(iv < ij && il < ij, "value {iv}, late {il}, joint {ij}");
    assert!((ij - entropy(labels.iter().copied())).abs() < 1e-12, "the pair determines the label");
    assert!(ij - iv.max(il) > 0.4, "gap {}", ij - iv.max(il));
}

#[test]
fn multiclass_templates_are_three_sigma_apart() {
    for c in [2, 4, 6] {
        let spec = SyntheticSpec::new(SignalMode::DenseMulticlass, 60, 12, 4, 0.0, 5).with_classes(c).with_noise(0.8);
        assert!(min_pairwise_distance(&class_templates(&spec)) >= 3.0 * 0.8 - 1e-12, "C={c}");
    }
}

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{BatError, Result};

/// Removes uniformly chosen observed cells until the global sparsity is
/// `level`. Cells are removed in a single seeded order over the corpus, so for
/// one seed a higher level always removes a superset of a lower level's cells.
///
/// Operates on raw corpora; standardization is fitted later, at split time.
pub fn induce_sparsity(dataset: &Dataset, level: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..1.0).contains(&level) {
        return Err(BatError::Argument(format!("sparsity level {level} outside [0, 1)")));
    }
    if dataset.is_standardized() {
        return Err(BatError::State("induce sparsity before standardizing".into()));
    }
    let current = dataset.sparsity();
    if level + 1e-12 < current {
        return Err(BatError::Argument(format!("level {level} is below the current sparsity {current:.6}")));
    }
    let total = dataset.total_cells();
    let target_observed = ((1.0 - level) * total as f64).round() as usize;
    let mut observed: Vec<(usize, usize)> = dataset
        .samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.values.iter().enumerate().filter(|(_, v)| !v.is_nan()).map(move |(j, _)| (i, j)))
        .collect();
    let remove = observed.len().saturating_sub(target_observed);
    let mut out = dataset.clone();
    if remove == 0 {
        return Ok(out);
    }
    observed.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    for &(i, j) in &observed[..remove] {
        out.samples[i].values[j] = f64::NAN;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::TimeSeriesSample;

    fn dense(n: usize, t: usize, d: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| TimeSeriesSample {
                id: format!("s{i}"),
                times: (0..t).map(|k| k as f64).collect(),
                values: (0..t * d).map(|k| (k + i) as f64).collect(),
                n_sensors: d,
                demographics: vec![],
                label: i % 2,
            })
            .collect();
        let names = (0..d).map(|k| format!("x{k}")).collect();
        Dataset::new("dense", samples, names, vec![], vec![], 2).unwrap()
    }

    #[test]
    fn level_zero_is_identity() {
        let ds = dense(4, 5, 3);
        assert_eq!(induce_sparsity(&ds, 0.0, 1).unwrap(), ds);
    }

    #[test]
    fn halves_observed_cells() {
        let ds = dense(10, 128, 6);
        let half = induce_sparsity(&ds, 0.5, 3).unwrap();
        let ratio = half.observed_cells() as f64 / ds.observed_cells() as f64;
        assert!((ratio - 0.5).abs() <= 0.001, "{ratio}");
        assert!((half.sparsity() - 0.5).abs() <= 0.001);

        let sparse = induce_sparsity(&ds, 0.99, 3).unwrap();
        assert!((sparse.sparsity() - 0.99).abs() <= 0.001);
    }

    #[test]
    fn never_creates_and_is_monotone() {
        let ds = dense(6, 20, 4);
        let a = induce_sparsity(&ds, 0.3, 8).unwrap();
        let b = induce_sparsity(&ds, 0.8, 8).unwrap();
        for ((s0, sa), sb) in ds.samples.iter().zip(&a.samples).zip(&b.samples) {
            for j in 0..s0.values.len() {
                if !sb.values[j].is_nan() {
                    assert!(!sa.values[j].is_nan());
                    assert_eq!(sb.values[j], s0.values[j]);
                }
                if !sa.values[j].is_nan() {
                    assert!(!s0.values[j].is_nan());
                }
            }
        }
    }

    #[test]
    fn rejects_levels_below_current() {
        let ds = induce_sparsity(&dense(4, 10, 2), 0.5, 1).unwrap();
        assert!(matches!(induce_sparsity(&ds, 0.25, 1), Err(BatError::Argument(_))));
        assert!(induce_sparsity(&ds, 0.75, 1).is_ok());
        assert!(induce_sparsity(&ds, 1.0, 1).is_err());
    }
}

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{BatError, Result};

/// Times each positive sample appears per epoch.
pub const RESAMPLE_FACTOR: usize = 3;

/// Balanced epoch for a binary task: every positive (label 1) index appears
/// `RESAMPLE_FACTOR` times, alongside as many negative draws. Negatives are
/// drawn without replacement when enough exist, otherwise with replacement.
pub fn compose_epoch_for_labels(labels: &[usize], seed: u64) -> Result<Vec<usize>> {
    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let negatives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
        return Err(BatError::Composition(format!("label {bad} in a binary task")));
    }
    if positives.is_empty() {
        return Err(BatError::Composition("no positive samples".into()));
    }
    let wanted = RESAMPLE_FACTOR * positives.len();
    if negatives.is_empty() {
        return Err(BatError::Composition("no negative samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut epoch = Vec::with_capacity(2 * wanted);
    for _ in 0..RESAMPLE_FACTOR {
        epoch.extend_from_slice(&positives);
    }
    if negatives.len() >= wanted {
        epoch.extend(index::sample(&mut rng, negatives.len(), wanted).into_iter().map(|i| negatives[i]));
    } else {
        epoch.extend((0..wanted).map(|_| negatives[rng.gen_range(0..negatives.len())]));
    }
    epoch.shuffle(&mut rng);
    Ok(epoch)
}

pub fn compose_epoch(train: &Dataset, seed: u64) -> Result<Vec<usize>> {
    if train.class_count != 2 {
        return Err(BatError::Composition(format!("resampled epochs need 2 classes, got {}", train.class_count)));
    }
    compose_epoch_for_labels(&train.labels(), seed)
}

/// Every index once, in random order.
pub fn shuffled_epoch(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

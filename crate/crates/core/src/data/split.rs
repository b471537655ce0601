use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Standardization};
use crate::error::{BatError, Result};
use crate::numerics::params::name_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    /// Relative sizes of (train, validation, test).
    #[serde(default = "default_ratios")]
    pub ratios: (usize, usize, usize),
    #[serde(default)]
    pub replication: usize,
}

fn default_ratios() -> (usize, usize, usize) {
    (8, 1, 1)
}

impl SplitSpec {
    pub fn new(seed: u64, replication: usize) -> Self {
        SplitSpec { seed, ratios: default_ratios(), replication }
    }
}

/// Standardized train/validation/test sets. `stats` were fitted on the
/// training members only.
#[derive(Clone, Debug)]
pub struct SplitData {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub stats: Standardization,
    /// Indices into the source dataset for (train, validation, test).
    pub indices: (Vec<usize>, Vec<usize>, Vec<usize>),
}

/// Random disjoint, exhaustive split. Validation and test sizes are rounded
/// down; the remainder goes to train.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<SplitData> {
    let n = dataset.len();
    if n < 10 {
        return Err(BatError::Size(format!("cannot split {n} samples; need at least 10")));
    }
    let (a, b, c) = spec.ratios;
    let whole = a + b + c;
    if whole == 0 || a == 0 {
        return Err(BatError::Argument(format!("invalid split ratios {:?}", spec.ratios)));
    }
    let n_val = n * b / whole;
    let n_test = n * c / whole;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(spec.seed, &format!("split/{}", spec.replication)));
    order.shuffle(&mut rng);
    let mut val: Vec<usize> = order[..n_val].to_vec();
    let mut test: Vec<usize> = order[n_val..n_val + n_test].to_vec();
    let mut train: Vec<usize> = order[n_val + n_test..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();

    let raw_train = dataset.subset(&train);
    let stats = raw_train.fit_standardization()?;
    Ok(SplitData {
        train: raw_train.standardized(&stats)?,
        validation: dataset.subset(&val).standardized(&stats)?,
        test: dataset.subset(&test).standardized(&stats)?,
        stats,
        indices: (train, val, test),
    })
}

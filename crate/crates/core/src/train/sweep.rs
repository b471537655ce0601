use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{run_replication, TrainConfig};
use crate::data::Dataset;
use crate::error::{BatError, Result};
use crate::model::ModelConfig;

/// Candidate values per hyperparameter; each trial picks one value from every
/// list, uniformly and independently.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpace {
    pub lr: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub embed_dim: Vec<usize>,
    pub heads: Vec<usize>,
    pub layers: Vec<usize>,
    pub dropout: Vec<f64>,
    pub batch_size: Vec<usize>,
}

impl Default for SweepSpace {
    fn default() -> Self {
        SweepSpace {
            lr: vec![3e-4, 1e-3, 3e-3],
            weight_decay: vec![0.0, 1e-3, 1e-2],
            embed_dim: vec![8, 16],
            heads: vec![1, 2],
            layers: vec![1, 2],
            dropout: vec![0.0, 0.1, 0.2],
            batch_size: vec![16, 32],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub trials: usize,
    pub replications: usize,
    pub seed: u64,
    pub space: SweepSpace,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec { trials: 20, replications: 5, seed: 0, space: SweepSpace::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialConfig {
    pub trial: usize,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialRow {
    pub trial: usize,
    pub replication: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub embed_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
    pub batch_size: usize,
    pub val_auprc: f64,
    pub val_auroc: f64,
    pub test_auprc: f64,
    pub test_auroc: f64,
    pub diverged: bool,
}

#[derive(Clone, Debug)]
pub struct SweepResult {
    pub rows: Vec<TrialRow>,
    pub best: TrialConfig,
    pub best_mean_val_auroc: f64,
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, values: &[T], name: &str) -> Result<T> {
    values.choose(rng).copied().ok_or_else(|| BatError::Sweep(format!("empty range for {name}")))
}

/// Draws `spec.trials` configurations. Head counts are drawn among the
/// listed values that divide the drawn width.
pub fn sample_trials(spec: &SweepSpec, base_model: &ModelConfig, base_train: &TrainConfig) -> Result<Vec<TrialConfig>> {
    let s = &spec.space;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.trials)
        .map(|trial| {
            let lr = pick(&mut rng, &s.lr, "lr")?;
            let weight_decay = pick(&mut rng, &s.weight_decay, "weight_decay")?;
            let embed_dim = pick(&mut rng, &s.embed_dim, "embed_dim")?;
            let heads_ok: Vec<usize> = s.heads.iter().copied().filter(|&h| h > 0 && embed_dim % h == 0).collect();
            let heads = pick(&mut rng, &heads_ok, &format!("heads dividing {embed_dim}"))?;
            let layers = pick(&mut rng, &s.layers, "layers")?;
            let dropout = pick(&mut rng, &s.dropout, "dropout")?;
            let batch_size = pick(&mut rng, &s.batch_size, "batch_size")?;
            let model = ModelConfig { embed_dim, heads, layers, dropout, ..base_model.clone() };
            model.validate().map_err(|e| BatError::Sweep(format!("trial {trial}: {e}")))?;
            let train = TrainConfig { lr, weight_decay, batch_size, ..base_train.clone() };
            Ok(TrialConfig { trial, model, train })
        })
        .collect()
}

/// Trains every sampled trial on every replication split; the winner has
/// the highest mean validation AUROC among trials that never diverged.
pub fn random_sweep(
    spec: &SweepSpec,
    base_model: &ModelConfig,
    base_train: &TrainConfig,
    corpus: &Dataset,
    split_seed: u64,
) -> Result<SweepResult> {
    if spec.trials == 0 || spec.replications == 0 {
        return Err(BatError::Sweep("need at least one trial and one replication".into()));
    }
    let trials = sample_trials(spec, base_model, base_train)?;
    let mut rows = Vec::with_capacity(trials.len() * spec.replications);
    let mut best: Option<(f64, usize)> = None;
    for tc in &trials {
        let mut sum = 0.0;
        let mut diverged = false;
        for rep in 0..spec.replications {
            let row = |val: Option<(f64, f64)>, test: Option<(f64, f64)>| TrialRow {
                trial: tc.trial,
                replication: rep,
                lr: tc.train.lr,
                weight_decay: tc.train.weight_decay,
                embed_dim: tc.model.embed_dim,
                heads: tc.model.heads,
                layers: tc.model.layers,
                dropout: tc.model.dropout,
                batch_size: tc.train.batch_size,
                val_auprc: val.map_or(f64::NAN, |v| v.0),
                val_auroc: val.map_or(f64::NAN, |v| v.1),
                test_auprc: test.map_or(f64::NAN, |v| v.0),
                test_auroc: test.map_or(f64::NAN, |v| v.1),
                diverged: val.is_none(),
            };
            match run_replication(corpus, &tc.model, &tc.train, split_seed, rep) {
                Ok(r) => {
                    let v = r.outcome.validation;
                    sum += v.auroc;
                    rows.push(row(Some((v.auprc, v.auroc)), Some((r.test.auprc, r.test.auroc))));
                }
                Err(BatError::Training { epoch, msg }) => {
                    log::warn!("trial {} replication {rep} diverged at epoch {epoch}: {msg}", tc.trial);
                    diverged = true;
                    rows.push(row(None, None));
                }
                Err(e) => return Err(e),
            }
        }
        let mean = sum / spec.replications as f64;
        if !diverged && best.map_or(true, |(b, _)| mean > b) {
            best = Some((mean, tc.trial));
        }
    }
    let (best_mean_val_auroc, idx) = best.ok_or_else(|| BatError::Sweep("every trial diverged".into()))?;
    Ok(SweepResult { rows, best: trials[idx].clone(), best_mean_val_auroc })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_deterministic_and_valid() {
        let spec = SweepSpec { trials: 20, seed: 11, ..SweepSpec::default() };
        let a = sample_trials(&spec, &ModelConfig::default(), &TrainConfig::default()).unwrap();
        let b = sample_trials(&spec, &ModelConfig::default(), &TrainConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert!(a.iter().all(|t| t.model.embed_dim % t.model.heads == 0));
        let c = sample_trials(&SweepSpec { seed: 12, ..spec }, &ModelConfig::default(), &TrainConfig::default()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_range_is_a_sweep_error() {
        let mut spec = SweepSpec::default();
        spec.space.lr.clear();
        assert!(matches!(
            sample_trials(&spec, &ModelConfig::default(), &TrainConfig::default()),
            Err(BatError::Sweep(_))
        ));
    }
}

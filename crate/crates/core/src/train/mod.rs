//! Training loop, optimizer, metrics and hyperparameter search.

pub mod metrics;
pub mod optim;
pub mod sweep;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use metrics::{
    auprc, auroc, cross_entropy, evaluate_probs, macro_auprc, macro_auroc, summarize, Metrics, MetricsSummary,
};
pub use optim::{optimizer_step, AdamState, AdamWConfig};
pub use sweep::{random_sweep, sample_trials, SweepResult, SweepSpace, SweepSpec, TrialConfig, TrialRow};

use crate::data::{compose_epoch, shuffled_epoch, split, Batch, Dataset, SplitData, SplitSpec};
use crate::embedding::{RegistryMode, SensorRegistry};
use crate::error::{BatError, Result};
use crate::model::{BatModel, ModelConfig};
use crate::numerics::params::name_seed;
use crate::numerics::Tape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { lr: 1e-3, weight_decay: 1e-2, batch_size: 32, epochs: 20, seed: 0, eval_batch_size: 128 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(BatError::Argument(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(BatError::Argument(format!("weight decay {} must be non-negative", self.weight_decay)));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(BatError::Argument("batch sizes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig::new(self.lr, self.weight_decay)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation: Metrics,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation AUROC.
    pub model: BatModel,
    /// 0 when no training epoch ran.
    pub best_epoch: usize,
    pub validation: Metrics,
    pub history: Vec<EpochLog>,
}

pub fn evaluate(model: &BatModel, dataset: &Dataset, batch_size: usize) -> Result<Metrics> {
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let probs = model.predict_proba(dataset, &idx, batch_size)?;
    evaluate_probs(&probs, &dataset.labels(), model.n_classes)
}

/// Trains `model` on `train`, returning the snapshot with the highest
/// validation AUROC. Binary tasks use positive-resampled epochs; others use
/// plain shuffles.
pub fn train(model: BatModel, train_set: &Dataset, validation: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_joint(model, &[(train_set, validation)], cfg)
}

fn epoch_order(ds: &Dataset, seed: u64) -> Result<Vec<usize>> {
    if ds.class_count == 2 {
        compose_epoch(ds, seed)
    } else {
        Ok(shuffled_epoch(ds.len(), seed))
    }
}

/// Trains one model on several `(train, validation)` corpora at once. Every
/// batch holds samples of a single corpus; with more than one corpus the
/// batches of an epoch are interleaved at random. The validation score is
/// the mean over corpora.
pub fn train_joint(model: BatModel, sets: &[(&Dataset, &Dataset)], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if sets.is_empty() {
        return Err(BatError::Argument("no corpus to train on".into()));
    }
    let mut rows = Vec::with_capacity(sets.len());
    for (train_set, _) in sets {
        if train_set.class_count != model.n_classes {
            return Err(BatError::Argument(format!(
                "corpus {} has {} classes, model predicts {}",
                train_set.name, train_set.class_count, model.n_classes
            )));
        }
        rows.push(model.registry.resolve(&train_set.name)?.to_vec());
    }
    let validate = |model: &BatModel| -> Result<Metrics> {
        let per: Vec<Metrics> = sets.iter().map(|(_, v)| evaluate(model, v, cfg.eval_batch_size)).collect::<Result<_>>()?;
        let n = per.len() as f64;
        Ok(Metrics { auprc: per.iter().map(|m| m.auprc).sum::<f64>() / n, auroc: per.iter().map(|m| m.auroc).sum::<f64>() / n })
    };
    let mut model = model;
    let mut state = AdamState::new();
    let opt = cfg.optimizer();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, Metrics, BatModel)> = None;
    if cfg.epochs == 0 {
        let m = validate(&model)?;
        return Ok(TrainOutcome { model, best_epoch: 0, validation: m, history });
    }
    for epoch in 1..=cfg.epochs {
        let mut batches: Vec<(usize, Vec<usize>)> = Vec::new();
        for (i, (train_set, _)) in sets.iter().enumerate() {
            let name = if i == 0 { format!("epoch/{epoch}") } else { format!("epoch/{epoch}/{i}") };
            let order = epoch_order(train_set, name_seed(cfg.seed, &name))?;
            batches.extend(order.chunks(cfg.batch_size).map(|c| (i, c.to_vec())));
        }
        if sets.len() > 1 {
            let mut rng = ChaCha8Rng::seed_from_u64(name_seed(cfg.seed, &format!("interleave/{epoch}")));
            batches.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for (step, (set, chunk)) in batches.iter().enumerate() {
            let batch = Batch::from_dataset(sets[*set].0, chunk)?;
            let mut tape = Tape::training(name_seed(cfg.seed, &format!("dropout/{epoch}/{step}")));
            let out = model.forward_rows(&mut tape, &batch, &rows[*set], false)?;
            let loss = tape.softmax_cross_entropy(out.logits, &batch.labels)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                let detail = tape.check_finite().err().map(|e| e.to_string()).unwrap_or_default();
                return Err(BatError::Training { epoch, msg: format!("loss is {value} {detail}") });
            }
            tape.backward(loss)?;
            model.params.zero_grad();
            tape.accumulate_param_grads(&mut model.params);
            optimizer_step(&mut model.params, &mut state, &opt).map_err(|e| BatError::Training { epoch, msg: e.to_string() })?;
            loss_sum += value;
        }
        let m = validate(&model).map_err(|e| match e {
            BatError::Numeric { op, detail } => BatError::Training { epoch, msg: format!("{op}: {detail}") },
            other => other,
        })?;
        history.push(EpochLog { epoch, train_loss: loss_sum / batches.len().max(1) as f64, validation: m });
        if best.as_ref().map_or(true, |(_, b, _)| m.auroc > b.auroc) {
            best = Some((epoch, m, model.clone()));
        }
    }
    let (best_epoch, validation, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { model, best_epoch, validation, history })
}

/// Result of training and testing on one replication split.
#[derive(Clone, Debug)]
pub struct ReplicationResult {
    pub replication: usize,
    pub outcome: TrainOutcome,
    pub test: Metrics,
    pub split: SplitData,
}

/// Splits `corpus` for `replication`, builds a fresh model and trains it.
/// Model and training seeds derive from `train_cfg.seed` and the
/// replication index, not from the attention mode.
pub fn run_replication(
    corpus: &Dataset,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    split_seed: u64,
    replication: usize,
) -> Result<ReplicationResult> {
    let data = split(corpus, &SplitSpec::new(split_seed, replication))?;
    let mut registry = SensorRegistry::new(RegistryMode::Shared);
    registry.register(&corpus.name, &corpus.sensor_names)?;
    let model = BatModel::new(
        model_cfg.clone(),
        registry,
        corpus.n_demographics(),
        corpus.class_count,
        name_seed(train_cfg.seed, &format!("model/{replication}")),
    )?;
    let mut model = model;
    model.standardization.insert(corpus.name.clone(), data.stats.clone());
    let cfg = TrainConfig { seed: name_seed(train_cfg.seed, &format!("train/{replication}")), ..train_cfg.clone() };
    let outcome = train(model, &data.train, &data.validation, &cfg)?;
    let test = evaluate(&outcome.model, &data.test, cfg.eval_batch_size)?;
    Ok(ReplicationResult { replication, outcome, test, split: data })
}

/// Result of training one model on several corpora for one replication.
#[derive(Clone, Debug)]
pub struct JointReplicationResult {
    pub replication: usize,
    pub outcome: TrainOutcome,
    /// Test metrics per corpus, in input order.
    pub test: Vec<Metrics>,
}

/// Splits every corpus for `replication` and trains a single model on all
/// training sets, with sensor identities resolved under `registry_mode`.
/// The corpora must agree on class count and demographic columns.
pub fn run_joint_replication(
    corpora: &[&Dataset],
    registry_mode: RegistryMode,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    split_seed: u64,
    replication: usize,
) -> Result<JointReplicationResult> {
    let first = corpora.first().ok_or_else(|| BatError::Argument("no corpus given".into()))?;
    let mut registry = SensorRegistry::new(registry_mode);
    for c in corpora {
        if c.class_count != first.class_count || c.demographic_names != first.demographic_names {
            return Err(BatError::Argument(format!(
                "corpora {} and {} differ in classes or demographic columns",
                first.name, c.name
            )));
        }
        registry.register(&c.name, &c.sensor_names)?;
    }
    let splits: Vec<SplitData> = corpora.iter().map(|c| split(c, &SplitSpec::new(split_seed, replication))).collect::<Result<_>>()?;
    let mut model = BatModel::new(
        model_cfg.clone(),
        registry,
        first.n_demographics(),
        first.class_count,
        name_seed(train_cfg.seed, &format!("model/{replication}")),
    )?;
    for (c, s) in corpora.iter().zip(&splits) {
        model.standardization.insert(c.name.clone(), s.stats.clone());
    }
    let cfg = TrainConfig { seed: name_seed(train_cfg.seed, &format!("train/{replication}")), ..train_cfg.clone() };
    let sets: Vec<(&Dataset, &Dataset)> = splits.iter().map(|s| (&s.train, &s.validation)).collect();
    let outcome = train_joint(model, &sets, &cfg)?;
    let test = splits.iter().map(|s| evaluate(&outcome.model, &s.test, cfg.eval_batch_size)).collect::<Result<_>>()?;
    Ok(JointReplicationResult { replication, outcome, test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SignalMode, SyntheticSpec};

    fn small() -> (Dataset, ModelConfig, TrainConfig) {
        let raw = generate_synthetic(&SyntheticSpec::new(SignalMode::MaskOnly, 200, 6, 3, 0.4, 2)).unwrap();
        let m = ModelConfig { embed_dim: 8, heads: 2, dropout: 0.1, ..ModelConfig::default() };
        let t = TrainConfig { epochs: 2, batch_size: 16, lr: 3e-3, ..TrainConfig::default() };
        (raw, m, t)
    }

    #[test]
    fn same_seed_same_parameters() {
        let (raw, m, t) = small();
        let a = run_replication(&raw, &m, &t, 1, 0).unwrap();
        let b = run_replication(&raw, &m, &t, 1, 0).unwrap();
        for (p, q) in a.outcome.model.params.iter().zip(b.outcome.model.params.iter()) {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(p.tensor.data()), bits(q.tensor.data()), "{}", p.name);
        }
        assert_eq!(a.outcome.history, b.outcome.history);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (raw, m, mut t) = small();
        t.epochs = 0;
        let r = run_replication(&raw, &m, &t, 1, 0).unwrap();
        assert_eq!(r.outcome.best_epoch, 0);
        assert!(r.outcome.history.is_empty());
        let fresh = BatModel::new(
            m.clone(),
            r.outcome.model.registry.clone(),
            raw.n_demographics(),
            2,
            name_seed(t.seed, "model/0"),
        )
        .unwrap();
        for (p, q) in fresh.params.iter().zip(r.outcome.model.params.iter()) {
            assert_eq!(p.tensor, q.tensor);
        }
    }

    #[test]
    fn divergence_reports_epoch() {
        let (raw, m, mut t) = small();
        t.lr = 1e300;
        match run_replication(&raw, &m, &t, 1, 0) {
            Err(BatError::Training { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected a training error, got {:?}", other.map(|r| r.test)),
        }
    }

    #[test]
    fn joint_replication_reports_each_corpus() {
        let names = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let a = generate_synthetic(
            &SyntheticSpec::new(SignalMode::MaskOnly, 100, 6, 3, 0.4, 2).with_name("a").with_sensor_names(names(&["x", "y", "z"])),
        )
        .unwrap();
        let b = generate_synthetic(
            &SyntheticSpec::new(SignalMode::MaskOnly, 100, 6, 3, 0.4, 3).with_name("b").with_sensor_names(names(&["x", "y", "w"])),
        )
        .unwrap();
        let (_, m, mut t) = small();
        t.epochs = 1;
        for (mode, vocab) in [(RegistryMode::Shared, 4), (RegistryMode::Separate, 6)] {
            let r = run_joint_replication(&[&a, &b], mode, &m, &t, 1, 0).unwrap();
            assert_eq!(r.test.len(), 2);
            assert_eq!(r.outcome.model.registry.len(), vocab);
            assert_eq!(r.outcome.model.standardization.len(), 2);
        }
        let mismatched = generate_synthetic(&SyntheticSpec::new(SignalMode::DenseMulticlass, 30, 6, 3, 0.0, 1).with_classes(3)).unwrap();
        assert!(run_joint_replication(&[&a, &mismatched], RegistryMode::Shared, &m, &t, 1, 0).is_err());
    }
}

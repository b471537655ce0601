use std::path::Path;

use bat_core::data::{split, SplitSpec};
use bat_core::model::BatModel;
use bat_core::train::{evaluate, summarize, MetricsSummary};
use serde::Serialize;

use super::Run;
use crate::output::{write_csv, write_json};
use crate::UsageError;

/// One replication, or a `mean` / `std` summary over replications.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub config_hash: String,
    pub task: String,
    pub mode: String,
    pub replication: String,
    pub best_epoch: Option<usize>,
    pub val_auprc: f64,
    pub val_auroc: f64,
    pub test_auprc: f64,
    pub test_auroc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistoryRow {
    pub config_hash: String,
    pub replication: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auprc: f64,
    pub val_auroc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub config_hash: String,
    pub task: String,
    pub mode: String,
    pub validation: MetricsSummary,
    pub test: MetricsSummary,
    #[serde(skip)]
    pub rows: Vec<MetricRow>,
    #[serde(skip)]
    pub history: Vec<HistoryRow>,
}

/// Trains one model per replication and writes `metrics.csv`,
/// `history.csv`, `summary.json`, the resolved `config.json` and
/// `checkpoints/rep{r}.ckpt`.
pub fn cmd_train(run: &Run) -> anyhow::Result<TrainReport> {
    let cfg = &run.config;
    let corpus = run.corpus()?;
    let mode = cfg.model.mode.as_str().to_string();
    let results = run.replicate(&corpus, &cfg.model, &format!("train {mode}"))?;

    let row = |replication: String, best_epoch, val: (f64, f64), test: (f64, f64)| MetricRow {
        config_hash: run.hash.clone(),
        task: cfg.task.clone(),
        mode: mode.clone(),
        replication,
        best_epoch,
        val_auprc: val.0,
        val_auroc: val.1,
        test_auprc: test.0,
        test_auroc: test.1,
    };
    let mut rows = Vec::new();
    let mut history = Vec::new();
    std::fs::create_dir_all(run.path("checkpoints"))?;
    for r in &results {
        let v = r.outcome.validation;
        rows.push(row(r.replication.to_string(), Some(r.outcome.best_epoch), (v.auprc, v.auroc), (r.test.auprc, r.test.auroc)));
        for h in &r.outcome.history {
            history.push(HistoryRow {
                config_hash: run.hash.clone(),
                replication: r.replication,
                epoch: h.epoch,
                train_loss: h.train_loss,
                val_auprc: h.validation.auprc,
                val_auroc: h.validation.auroc,
            });
        }
        r.outcome.model.save(&run.path(&format!("checkpoints/rep{}.ckpt", r.replication)))?;
    }
    let validation = summarize(&results.iter().map(|r| r.outcome.validation).collect::<Vec<_>>())?;
    let test = summarize(&results.iter().map(|r| r.test).collect::<Vec<_>>())?;
    let m = |s: &MetricsSummary| ((s.mean.auprc, s.mean.auroc), (s.std.auprc, s.std.auroc));
    let ((vm, vs), (tm, ts)) = (m(&validation), m(&test));
    rows.push(row("mean".into(), None, vm, tm));
    rows.push(row("std".into(), None, vs, ts));

    write_csv(&run.path("metrics.csv"), &rows, None)?;
    write_csv(
        &run.path("history.csv"),
        &history,
        Some(&["config_hash", "replication", "epoch", "train_loss", "val_auprc", "val_auroc"]),
    )?;
    run.write_config()?;
    let report = TrainReport { config_hash: run.hash.clone(), task: cfg.task.clone(), mode, validation, test, rows, history };
    write_json(&run.path("summary.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRow {
    pub config_hash: String,
    /// File name of the checkpoint.
    pub checkpoint: String,
    pub replication: usize,
    pub split: String,
    pub n: usize,
    pub auprc: f64,
    pub auroc: f64,
}

/// Scores a saved model on the train, validation and test parts of
/// replication split `replication` and on the whole corpus. Writes
/// `evaluation.csv`.
pub fn cmd_evaluate(run: &Run, checkpoint: &Path, replication: usize) -> anyhow::Result<Vec<EvalRow>> {
    if !checkpoint.exists() {
        return Err(UsageError(format!("checkpoint {} does not exist", checkpoint.display())).into());
    }
    let model = BatModel::load(checkpoint)?;
    let raw = run.corpus()?;
    let whole = model.prepare(&raw).map_err(|e| UsageError(format!("checkpoint does not fit corpus: {e}")))?;
    let parts = split(&raw, &SplitSpec::new(run.config.seed, replication))?;
    let bs = run.config.train.eval_batch_size;
    let mut rows = Vec::new();
    for (name, ds) in [("train", &parts.train), ("validation", &parts.validation), ("test", &parts.test), ("all", &whole)] {
        let m = evaluate(&model, ds, bs)?;
        rows.push(EvalRow {
            config_hash: run.hash.clone(),
            checkpoint: checkpoint.file_name().map_or_else(String::new, |f| f.to_string_lossy().into_owned()),
            replication,
            split: name.into(),
            n: ds.len(),
            auprc: m.auprc,
            auroc: m.auroc,
        });
    }
    write_csv(&run.path("evaluation.csv"), &rows, None)?;
    Ok(rows)
}

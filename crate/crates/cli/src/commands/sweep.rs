use bat_core::data::write_ndjson;
use bat_core::train::{random_sweep, TrialConfig};
use serde::Serialize;

use super::Run;
use crate::output::{write_csv, write_json};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub config_hash: String,
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

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub config_hash: String,
    pub best: TrialConfig,
    pub best_mean_val_auroc: f64,
    #[serde(skip)]
    pub rows: Vec<SweepRow>,
}

/// Random hyperparameter search over `config.sweep`. Writes `sweep.csv`
/// (one row per trial and replication) and `sweep_best.json`.
pub fn cmd_sweep(run: &Run) -> anyhow::Result<SweepReport> {
    let cfg = &run.config;
    let corpus = run.corpus()?;
    let result = random_sweep(&cfg.sweep, &cfg.model, &cfg.train, &corpus, cfg.seed)?;
    let rows: Vec<SweepRow> = result
        .rows
        .iter()
        .map(|r| SweepRow {
            config_hash: run.hash.clone(),
            trial: r.trial,
            replication: r.replication,
            lr: r.lr,
            weight_decay: r.weight_decay,
            embed_dim: r.embed_dim,
            heads: r.heads,
            layers: r.layers,
            dropout: r.dropout,
            batch_size: r.batch_size,
            val_auprc: r.val_auprc,
            val_auroc: r.val_auroc,
            test_auprc: r.test_auprc,
            test_auroc: r.test_auroc,
            diverged: r.diverged,
        })
        .collect();
    let report = SweepReport {
        config_hash: run.hash.clone(),
        best: result.best,
        best_mean_val_auroc: result.best_mean_val_auroc,
        rows,
    };
    write_csv(&run.path("sweep.csv"), &report.rows, None)?;
    write_json(&run.path("sweep_best.json"), &report)?;
    run.write_config()?;
    Ok(report)
}

#[derive(Serialize)]
struct CorpusSummary<'a> {
    config_hash: &'a str,
    name: &'a str,
    samples: usize,
    sensors: usize,
    classes: usize,
    class_counts: Vec<usize>,
    sparsity: f64,
}

/// Materializes the configured corpus as `data.ndjson` with a
/// `data_summary.json` beside it.
pub fn cmd_generate_data(run: &Run) -> anyhow::Result<std::path::PathBuf> {
    let ds = run.corpus()?;
    let path = run.path("data.ndjson");
    std::fs::create_dir_all(run.out())?;
    write_ndjson(&ds, &path)?;
    write_json(
        &run.path("data_summary.json"),
        &CorpusSummary {
            config_hash: &run.hash,
            name: &ds.name,
            samples: ds.len(),
            sensors: ds.n_sensors(),
            classes: ds.class_count,
            class_counts: ds.class_counts(),
            sparsity: ds.sparsity(),
        },
    )?;
    Ok(path)
}

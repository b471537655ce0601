use serde::Serialize;

use super::Run;
use crate::output::{mean, std, write_csv, write_json};
use crate::AblationMode;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub config_hash: String,
    pub task: String,
    pub mode: String,
    pub ablation: String,
    pub replication: usize,
    pub best_epoch: usize,
    pub val_auprc: f64,
    pub val_auroc: f64,
    pub test_auprc: f64,
    pub test_auroc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationSummaryRow {
    pub config_hash: String,
    pub ablation: String,
    pub n: usize,
    pub auprc_mean: f64,
    pub auprc_std: f64,
    pub auroc_mean: f64,
    pub auroc_std: f64,
}

#[derive(Serialize)]
struct Findings<'a> {
    config_hash: &'a str,
    /// `full` has at least the mean test AUPRC of every `remove_*` mode.
    full_beats_every_removal: Option<bool>,
    /// The `remove_*` mode with the lowest mean test AUPRC.
    worst_removal: Option<&'a str>,
    summary: &'a [AblationSummaryRow],
}

/// Trains every selected ablation on every replication, keeping all other
/// hyperparameters. Writes `ablation.csv` (one row per ablation and
/// replication), `ablation_summary.csv` and `ablation_summary.json`.
pub fn cmd_ablate(run: &Run) -> anyhow::Result<(Vec<AblationRow>, Vec<AblationSummaryRow>)> {
    let cfg = &run.config;
    let corpus = run.corpus()?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &ablation in &cfg.ablations {
        let model = ablation.apply(&cfg.model);
        let results = run.replicate(&corpus, &model, &format!("ablate {}", ablation.as_str()))?;
        for r in &results {
            rows.push(AblationRow {
                config_hash: run.hash.clone(),
                task: cfg.task.clone(),
                mode: cfg.model.mode.as_str().into(),
                ablation: ablation.as_str().into(),
                replication: r.replication,
                best_epoch: r.outcome.best_epoch,
                val_auprc: r.outcome.validation.auprc,
                val_auroc: r.outcome.validation.auroc,
                test_auprc: r.test.auprc,
                test_auroc: r.test.auroc,
            });
        }
        let pr: Vec<f64> = results.iter().map(|r| r.test.auprc).collect();
        let roc: Vec<f64> = results.iter().map(|r| r.test.auroc).collect();
        summary.push(AblationSummaryRow {
            config_hash: run.hash.clone(),
            ablation: ablation.as_str().into(),
            n: results.len(),
            auprc_mean: mean(&pr),
            auprc_std: std(&pr),
            auroc_mean: mean(&roc),
            auroc_std: std(&roc),
        });
    }

    let find = |m: AblationMode| summary.iter().find(|s| s.ablation == m.as_str());
    let removals: Vec<&AblationSummaryRow> = summary.iter().filter(|s| s.ablation.starts_with("remove_")).collect();
    let full_beats_every_removal =
        find(AblationMode::Full).filter(|_| !removals.is_empty()).map(|f| removals.iter().all(|r| f.auprc_mean >= r.auprc_mean));
    let worst_removal =
        removals.iter().min_by(|a, b| a.auprc_mean.total_cmp(&b.auprc_mean)).map(|r| r.ablation.as_str());

    write_csv(&run.path("ablation.csv"), &rows, None)?;
    write_csv(&run.path("ablation_summary.csv"), &summary, None)?;
    write_json(
        &run.path("ablation_summary.json"),
        &Findings { config_hash: &run.hash, full_beats_every_removal, worst_removal, summary: &summary },
    )?;
    run.write_config()?;
    Ok((rows, summary))
}

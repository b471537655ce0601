use bat_core::data::induce_sparsity;
use bat_core::model::ModelConfig;
use bat_core::numerics::name_seed;
use serde::Serialize;

use super::Run;
use crate::output::{mean, std, write_csv, write_json};
use crate::UsageError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SparsityRow {
    pub config_hash: String,
    pub task: String,
    pub level: f64,
    pub observed_sparsity: f64,
    pub mode: String,
    pub replication: usize,
    pub best_epoch: usize,
    pub val_auprc: f64,
    pub val_auroc: f64,
    pub test_auprc: f64,
    pub test_auroc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SparsitySummaryRow {
    pub config_hash: String,
    pub level: f64,
    pub mode: String,
    pub n: usize,
    pub auprc_mean: f64,
    pub auprc_std: f64,
    pub auroc_mean: f64,
    pub auroc_std: f64,
}

#[derive(Serialize)]
struct ModeFindings {
    mode: String,
    /// Largest rise in mean test AUROC from one level to the next.
    max_rise: f64,
    /// Distance of the last level's mean test AUROC from 0.5.
    last_level_distance_from_chance: f64,
}

/// Removes observations down to each configured sparsity level and trains
/// every configured attention mode on every replication. Levels share one
/// removal order, so each level's cells are a subset of the previous one's.
/// Level 0 uses the corpus as loaded. Writes `sparsity.csv`,
/// `sparsity_summary.csv` and `sparsity_summary.json`.
pub fn cmd_sparsity_sweep(run: &Run) -> anyhow::Result<(Vec<SparsityRow>, Vec<SparsitySummaryRow>)> {
    let cfg = &run.config;
    let raw = run.corpus()?;
    let seed = name_seed(cfg.seed, "sparsity");
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &level in &cfg.sparsity_levels {
        let corpus = if level == 0.0 {
            raw.clone()
        } else {
            induce_sparsity(&raw, level, seed).map_err(|e| UsageError(format!("sparsity level {level}: {e}")))?
        };
        let observed_sparsity = corpus.sparsity();
        for &mode in &cfg.modes {
            let model = ModelConfig { mode, ..cfg.model.clone() };
            let results = run.replicate(&corpus, &model, &format!("sparsity {level} {}", mode.as_str()))?;
            for r in &results {
                rows.push(SparsityRow {
                    config_hash: run.hash.clone(),
                    task: cfg.task.clone(),
                    level,
                    observed_sparsity,
                    mode: mode.as_str().into(),
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
            summary.push(SparsitySummaryRow {
                config_hash: run.hash.clone(),
                level,
                mode: mode.as_str().into(),
                n: results.len(),
                auprc_mean: mean(&pr),
                auprc_std: std(&pr),
                auroc_mean: mean(&roc),
                auroc_std: std(&roc),
            });
        }
    }

    let findings: Vec<ModeFindings> = cfg
        .modes
        .iter()
        .map(|m| {
            let curve: Vec<f64> = summary.iter().filter(|s| s.mode == m.as_str()).map(|s| s.auroc_mean).collect();
            ModeFindings {
                mode: m.as_str().into(),
                max_rise: curve.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max),
                last_level_distance_from_chance: curve.last().map_or(f64::NAN, |a| (a - 0.5).abs()),
            }
        })
        .collect();

    write_csv(&run.path("sparsity.csv"), &rows, None)?;
    write_csv(&run.path("sparsity_summary.csv"), &summary, None)?;
    write_json(&run.path("sparsity_summary.json"), &serde_json::json!({ "config_hash": run.hash, "modes": findings }))?;
    run.write_config()?;
    Ok((rows, summary))
}

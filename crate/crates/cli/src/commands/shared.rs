use std::collections::BTreeSet;

use bat_core::embedding::RegistryMode;
use bat_core::train::run_joint_replication;
use log::{info, warn};
use serde::Serialize;

use super::{combined_hash, Run};
use crate::config::ExperimentConfig;
use crate::output::{mean, std, write_csv, write_json};
use crate::UsageError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SharedRow {
    pub config_hash: String,
    /// Registry mode actually used.
    pub registry: String,
    pub dataset: String,
    pub replication: usize,
    pub vocabulary: usize,
    pub best_epoch: usize,
    pub test_auprc: f64,
    pub test_auroc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SharedSummaryRow {
    pub config_hash: String,
    pub registry: String,
    pub dataset: String,
    pub n: usize,
    pub auprc_mean: f64,
    pub auprc_std: f64,
    pub auroc_mean: f64,
    pub auroc_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SharedReport {
    pub config_hash: String,
    pub overlap: Vec<String>,
    /// Shared mode was requested but no sensor name overlaps.
    pub fell_back_to_separate: bool,
    /// Some dataset and metric has a shared-mode std at most its
    /// separate-mode std. `None` unless both modes ran.
    pub shared_std_not_above_separate: Option<bool>,
    pub summary: Vec<SharedSummaryRow>,
    #[serde(skip)]
    pub rows: Vec<SharedRow>,
}

/// Trains one model jointly on the corpus of `run` and that of `second`,
/// once per registry mode and replication, and reports per-corpus test
/// metrics. Model and training settings come from `run`. Writes
/// `shared_sensors.csv`, `shared_sensors_summary.csv` and
/// `shared_sensors_summary.json`.
pub fn cmd_shared_sensors(run: &Run, second: &ExperimentConfig, registries: &[RegistryMode]) -> anyhow::Result<SharedReport> {
    second.validate()?;
    let cfg = &run.config;
    let a = run.corpus()?;
    let b = second.data.load()?;
    if a.name == b.name {
        return Err(UsageError(format!("both corpora are named {:?}; give one a distinct name", a.name)).into());
    }
    let hash = combined_hash(&[&run.hash, &second.hash()]);
    let names_b: BTreeSet<&String> = b.sensor_names.iter().collect();
    let overlap: Vec<String> = a.sensor_names.iter().filter(|s| names_b.contains(s)).cloned().collect();
    let mut fell_back = false;
    let mut modes: Vec<RegistryMode> = Vec::new();
    for &m in registries {
        let m = if m == RegistryMode::Shared && overlap.is_empty() {
            warn!("corpora {} and {} share no sensor names; running shared mode as separate", a.name, b.name);
            fell_back = true;
            RegistryMode::Separate
        } else {
            m
        };
        if !modes.contains(&m) {
            modes.push(m);
        }
    }

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &mode in &modes {
        let label = registry_name(mode);
        let mut per_corpus: Vec<Vec<(f64, f64)>> = vec![Vec::new(); 2];
        for r in 0..cfg.replications {
            let res = run_joint_replication(&[&a, &b], mode, &cfg.model, &cfg.train, cfg.seed, r)?;
            info!("shared-sensors {label}: replication {}/{}", r + 1, cfg.replications);
            for (i, (ds, m)) in [&a, &b].iter().zip(&res.test).enumerate() {
                per_corpus[i].push((m.auprc, m.auroc));
                rows.push(SharedRow {
                    config_hash: hash.clone(),
                    registry: label.into(),
                    dataset: ds.name.clone(),
                    replication: r,
                    vocabulary: res.outcome.model.registry.len(),
                    best_epoch: res.outcome.best_epoch,
                    test_auprc: m.auprc,
                    test_auroc: m.auroc,
                });
            }
        }
        for (ds, runs) in [&a, &b].iter().zip(&per_corpus) {
            let pr: Vec<f64> = runs.iter().map(|r| r.0).collect();
            let roc: Vec<f64> = runs.iter().map(|r| r.1).collect();
            summary.push(SharedSummaryRow {
                config_hash: hash.clone(),
                registry: label.into(),
                dataset: ds.name.clone(),
                n: runs.len(),
                auprc_mean: mean(&pr),
                auprc_std: std(&pr),
                auroc_mean: mean(&roc),
                auroc_std: std(&roc),
            });
        }
    }

    let pick = |reg: &'static str| summary.iter().filter(move |s| s.registry == reg);
    let shared_std_not_above_separate = (modes.len() == 2).then(|| {
        pick("shared").zip(pick("separate")).any(|(s, p)| s.auprc_std <= p.auprc_std || s.auroc_std <= p.auroc_std)
    });

    let report = SharedReport {
        config_hash: hash,
        overlap,
        fell_back_to_separate: fell_back,
        shared_std_not_above_separate,
        summary,
        rows,
    };
    write_csv(&run.path("shared_sensors.csv"), &report.rows, None)?;
    write_csv(&run.path("shared_sensors_summary.csv"), &report.summary, None)?;
    write_json(&run.path("shared_sensors_summary.json"), &report)?;
    run.write_config()?;
    write_json(&run.path("config_second.json"), second)?;
    Ok(report)
}

fn registry_name(mode: RegistryMode) -> &'static str {
    match mode {
        RegistryMode::Shared => "shared",
        RegistryMode::Separate => "separate",
    }
}

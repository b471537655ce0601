//! One function per subcommand. Each writes its tables under the run's
//! output directory and returns the rows it wrote.

mod ablate;
mod export;
mod shared;
mod sparsity;
mod sweep;
mod train;

use std::path::{Path, PathBuf};

use bat_core::data::Dataset;
use bat_core::model::ModelConfig;
use bat_core::train::{run_replication, ReplicationResult};
use log::info;
use sha2::{Digest, Sha256};

pub use ablate::{cmd_ablate, AblationRow, AblationSummaryRow};
pub use export::{cmd_export_attention, DensityRow, ExportReport, ExportRow, PassSummary};
pub use shared::{cmd_shared_sensors, SharedReport, SharedRow, SharedSummaryRow};
pub use sparsity::{cmd_sparsity_sweep, SparsityRow, SparsitySummaryRow};
pub use sweep::{cmd_generate_data, cmd_sweep, SweepReport, SweepRow};
pub use train::{cmd_evaluate, cmd_train, EvalRow, HistoryRow, MetricRow, TrainReport};

use crate::config::ExperimentConfig;
use crate::output::write_json;

/// A validated config together with its hash.
#[derive(Clone, Debug)]
pub struct Run {
    pub config: ExperimentConfig,
    pub hash: String,
}

impl Run {
    pub fn new(config: ExperimentConfig) -> anyhow::Result<Run> {
        config.validate()?;
        let hash = config.hash();
        Ok(Run { config, hash })
    }

    pub fn out(&self) -> &Path {
        &self.config.output_dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.config.output_dir.join(name)
    }

    pub fn corpus(&self) -> anyhow::Result<Dataset> {
        self.config.data.load()
    }

    fn write_config(&self) -> anyhow::Result<()> {
        write_json(&self.path("config.json"), &self.config)
    }

    /// Trains `model` on every replication split of `corpus`.
    fn replicate(&self, corpus: &Dataset, model: &ModelConfig, label: &str) -> anyhow::Result<Vec<ReplicationResult>> {
        let n = self.config.replications;
        (0..n)
            .map(|r| {
                let res = run_replication(corpus, model, &self.config.train, self.config.seed, r)?;
                info!("{label}: replication {}/{n} test auroc {:.4}", r + 1, res.test.auroc);
                Ok(res)
            })
            .collect()
    }
}

/// Hash over several component hashes, same width as a config hash.
pub fn combined_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(&h.finalize()[..8])
}

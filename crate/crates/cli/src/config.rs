use std::path::{Path, PathBuf};

use anyhow::Context;
use bat_core::data::{generate_synthetic, load_ndjson, Dataset, SignalMode, SyntheticSpec};
use bat_core::model::{AttentionMode, ModelConfig};
use bat_core::train::{SweepSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ablation::AblationMode;
use crate::UsageError;

pub const DEFAULT_SPARSITY_LEVELS: [f64; 7] = [0.0, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Ndjson { path: PathBuf },
    Synthetic(SyntheticSpec),
}

impl DataSource {
    pub fn load(&self) -> anyhow::Result<Dataset> {
        match self {
            DataSource::Ndjson { path } => {
                if !path.exists() {
                    return Err(UsageError(format!("dataset {} does not exist", path.display())).into());
                }
                load_ndjson(path).with_context(|| format!("loading {}", path.display()))
            }
            DataSource::Synthetic(spec) => Ok(generate_synthetic(spec)?),
        }
    }
}

/// Everything a command needs; a run is a function of this value alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: String,
    pub data: DataSource,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub replications: usize,
    /// Seeds the replication splits; `train.seed` seeds initialization and batching.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub ablations: Vec<AblationMode>,
    pub sparsity_levels: Vec<f64>,
    /// Attention modes compared by the sparsity sweep.
    pub modes: Vec<AttentionMode>,
    pub sweep: SweepSpec,
    /// Attention weights kept per (track, pass) on export.
    pub export_k: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut spec = SyntheticSpec::new(SignalMode::CrossAxis, 2000, 16, 8, 0.5, 0);
        spec.noise = 0.5;
        ExperimentConfig {
            task: "cross_axis".into(),
            data: DataSource::Synthetic(spec),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            replications: 5,
            seed: 0,
            output_dir: PathBuf::from("out"),
            ablations: AblationMode::ALL.to_vec(),
            sparsity_levels: DEFAULT_SPARSITY_LEVELS.to_vec(),
            modes: vec![AttentionMode::Biaxial, AttentionMode::TimeOnly, AttentionMode::SensorOnly],
            sweep: SweepSpec::default(),
            export_k: 20,
        }
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())).into())
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let bad = |msg: String| Err(UsageError(msg));
        if self.task.trim().is_empty() {
            return bad("task name is empty".into());
        }
        self.model.validate().map_err(|e| UsageError(format!("model: {e}")))?;
        self.train.validate().map_err(|e| UsageError(format!("train: {e}")))?;
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.ablations.is_empty() {
            return bad("no ablation selected".into());
        }
        if self.modes.is_empty() {
            return bad("no attention mode selected".into());
        }
        if self.export_k == 0 {
            return bad("export_k must be at least 1".into());
        }
        for &p in &self.sparsity_levels {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("sparsity level {p} outside [0, 1)"));
            }
        }
        if let DataSource::Synthetic(spec) = &self.data {
            if spec.n == 0 || spec.t == 0 || spec.d == 0 {
                return bad("synthetic corpus has an empty dimension".into());
            }
            if !(0.0..1.0).contains(&spec.sparsity) {
                return bad(format!("synthetic sparsity {} outside [0, 1)", spec.sparsity));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, truncated to 16 characters.
    /// The output directory does not take part.
    pub fn hash(&self) -> String {
        let keyed = ExperimentConfig { output_dir: PathBuf::new(), ..self.clone() };
        let json = serde_json::to_vec(&keyed).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    /// Applies command-line overrides. `--mode` also narrows the modes compared
    /// by the sparsity sweep.
    pub fn with_overrides(mut self, seed: Option<u64>, mode: Option<AttentionMode>, out: Option<PathBuf>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
            self.train.seed = s;
        }
        if let Some(m) = mode {
            self.model.mode = m;
            self.modes = vec![m];
        }
        if let Some(o) = out {
            self.output_dir = o;
        }
        self
    }
}

//! Experiment harness for the bi-axial transformer: training, ablations,
//! sparsity sweeps, shared sensor vocabularies, attention export and
//! hyperparameter search, all driven by one JSON config.

pub mod ablation;
pub mod commands;
pub mod config;
pub mod output;

use std::fmt;

pub use ablation::AblationMode;
pub use commands::{
    cmd_ablate, cmd_evaluate, cmd_export_attention, cmd_generate_data, cmd_shared_sensors, cmd_sparsity_sweep, cmd_sweep,
    cmd_train, Run,
};
pub use config::{DataSource, ExperimentConfig, DEFAULT_SPARSITY_LEVELS};

/// Bad input from the user: an invalid config, a missing file or an unknown
/// sample. The binary exits with status 2 on these.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Exit status for a command result.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.chain().any(|e| e.downcast_ref::<UsageError>().is_some()) {
        2
    } else {
        1
    }
}

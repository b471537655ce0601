//! Dense `f64` tensors with reverse-mode differentiation.

pub mod checkpoint;
pub mod gradcheck;
pub mod opcases;
pub mod params;
pub mod tape;
pub mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use gradcheck::{grad_check, grad_check_params, grad_check_training, GradReport};
pub use opcases::{op_cases, OpCase};
pub use params::{name_seed, Init, ParamId, ParamStore, Parameter};
pub use tape::{PoolMode, Tape, Var};
pub use tensor::Tensor;

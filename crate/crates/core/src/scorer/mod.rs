//! Per-pixel change scorer: model, loss, training and checkpoints.

mod checkpoint;
mod gradcheck;
mod loss;
mod network;
pub mod tensor;
mod train;

pub use checkpoint::{Checkpoint, CheckpointHeader, Thresholds};
pub use gradcheck::{grad_check, grad_check_indices, grad_check_with, relative_error, sample_indices, RELATIVE_FLOOR};
pub use loss::{weighted_bce, weighted_bce_logits, LossConfig, EPS};
pub use network::{grid_tensor, Forward, Scorer, ScorerConfig, ScorerModel};
pub use train::{evaluate, train, write_log, AdamW, EpochLog, TrainConfig, TrainOutcome, Validation};

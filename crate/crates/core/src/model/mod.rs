//! Block graph-attention network: embedding block, attention message
//! passing, pooled classification head.

pub mod batch;
pub mod bgnn;
pub mod checkpoint;
pub mod config;
pub mod train;

pub use batch::{GraphBatch, GraphSample, InputScaling};
pub use bgnn::{predictions, probabilities, Bgnn};
pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_SCHEMA_VERSION};
pub use config::{ModelConfig, TrainConfig, Variant};
pub use train::{
    ablate, accuracy, evaluate, gradient_check, loss_and_grads, make_batches, train, train_with_progress, AblationRow,
    EpochRecord, TrainReport,
};

//! Dense tensors, a reverse-mode tape, feedforward networks and AdamW.

mod checkpoint;
mod mlp;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use mlp::{mlp_forward, BatchNormParams, BatchStats, BoundMlp, Dense, Mlp, MlpSpec};
pub use optim::{adamw_step, AdamWConfig, EarlyStopping, OptimizerState, PlateauScheduler, TrainingConfig};
pub use tape::{sigmoid, Activation, Gradients, Tape, Var};
pub use tensor::Tensor;

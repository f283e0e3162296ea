//! Relational graph convolutional network for contract-level regression.

mod checkpoint;
mod matrix;
mod metrics;
mod model;
mod optim;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use matrix::Matrix;
pub use metrics::{mse_loss, r2_score};
pub use model::{
    backward, features_to_matrix, layer_param_count, untied_layer_param_count, Activation, BoundGraph, ForwardCache,
    Gradients, Masks, Mode, ModelConfig, Param, RgcnModel,
};
pub use optim::{Adam, Optimizer, OptimizerKind, Sgd};
pub use train::{train, EpochLog, History, TrainConfig, TrainSplit, HIDDEN_CHOICES, LR_RANGE};

#[derive(Debug, thiserror::Error)]
pub enum RgcnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no training targets")]
    EmptyTrainSet,
    #[error("target has zero variance")]
    DegenerateTarget,
    #[error("non-finite gradient in {0}")]
    NonFinite(String),
    #[error("missing target for node {0}")]
    MissingTarget(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("split overlap at node {0}")]
    SplitOverlap(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, RgcnError>;

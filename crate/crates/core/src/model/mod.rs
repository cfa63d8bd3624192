//! The attention-gated CNN: configuration, parameters, forward graph,
//! training and checkpoints.

mod checkpoint;
mod hyper;
mod network;
mod train;

use thiserror::Error;

use crate::autodiff::TensorError;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointError,
    CheckpointMeta, TensorEntry, VocabWarning, FORMAT_VERSION, MAGIC,
};
pub use hyper::{EmbeddingMode, HyperParams, InitScheme, OptimizerSettings};
pub use network::{
    apply_activation, argmax, attention_gate, AgcnnModel, AttnGroup, ConvGroup, Forward, ParamVars,
    AGCNN_INIT_RANGE, EMBEDDING_INIT_RANGE,
};
pub use train::{batch_gradients, evaluate, fit, fit_with, train_step, Adam, EpochLog};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("training diverged (loss {loss}) with {config}")]
    Divergence { loss: f64, config: String },
    #[error("sequence of length {len} is shorter than window {window}")]
    SequenceTooShort { len: usize, window: usize },
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("label {label} outside 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty mini-batch")]
    EmptyBatch,
    #[error("empty dataset")]
    EmptyDataset,
}

//! A small convolutional network scoring patch pairs.
//!
//! The primary head stacks two patches as one 2-channel input and regresses
//! a single similarity score (positive means "match"). A Siamese branch
//! variant produces per-patch descriptors compared by Euclidean distance.
//!
//! Parameters are stored as `f32` (the on-disk precision) while every
//! forward and backward pass accumulates in `f64`.

mod io;
mod net;
mod siamese;
mod spec;
mod tensor;
mod train;

pub use io::{load_model, read_model, save_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use net::{
    backward, forward_two_channel, loss, predict, Gradients, LossKind, PreparedNet,
};
pub use siamese::{siamese_distance, siamese_embed};
pub use spec::{ConvBlock, HeadKind, NetSpec, NetworkParams, LayerParams};
pub use tensor::Tensor;
pub use train::{
    train, train_with_progress, EpochStats, Label, LabeledPair, StepDecay, TrainConfig, TrainOutcome,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConvNetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("descriptor lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty: {0}")]
    EmptyDataset(&'static str),
    #[error("model i/o failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("not a model file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported model format version {found} (expected {expected})")]
    VersionMismatch { found: u8, expected: u8 },
    #[error("model checksum mismatch or truncated file")]
    ChecksumMismatch,
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
}

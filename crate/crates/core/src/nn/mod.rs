//! A small dense-tensor training engine for the fixed tactile CNN:
//! conv → BN → ReLU → conv → BN → ReLU → flatten → three linear layers.

mod gemm;

pub mod checkpoint;
pub mod model;
pub mod ops;
pub mod optim;
pub mod tensor;
pub mod train;

use thiserror::Error;

pub use model::{Architecture, ClassPrediction, ForwardCache, Gradients, ModelParams, Network};
pub use ops::Mode;
pub use optim::Sgd;
pub use tensor::Tensor;
pub use train::{EpochStats, TrainConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("tensor of shape {shape:?} cannot hold {len} values")]
    BadTensor { shape: Vec<usize>, len: usize },
    #[error("batch norm in train mode needs at least 2 values per channel, got {count}")]
    BatchTooSmall { count: usize },
    #[error("running variance of channel {channel} is {var}, statistics are corrupt")]
    CorruptStatistics { channel: usize, var: f64 },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("backward called without a cached train-mode forward pass")]
    NoCachedForward,
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid training configuration: {0}")]
    BadConfig(String),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

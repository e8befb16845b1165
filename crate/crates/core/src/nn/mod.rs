//! A small sequential neural network engine: embedding, 1-D and 2-D
//! convolution, max pooling, dense, ReLU and softmax layers with
//! hand-written backpropagation, momentum SGD and a gradient checker.

mod checkpoint;
mod gradcheck;
mod layer;
mod model;
mod tensor;
mod train;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, grad_check_with, relative_error, GradCheckOptions, GradCheckReport};
pub use layer::LayerSpec;
pub use model::{loss_cross_entropy, Gradients, Model, PROB_FLOOR};
pub use tensor::{Scalar, Tensor};
pub use train::{batch_gradients, mean_loss, train, Sgd, TrainConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch at layer {layer}: {detail}")]
    ShapeMismatch { layer: usize, detail: String },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Output classes of both reference models.
pub const NUM_CLASSES: usize = crate::emotion::NUM_EMOTIONS;

pub const IMAGE_SIDE: usize = 48;

/// embedding(32) → conv1d(64, width 3) → relu → global max pool →
/// dense(64) → relu → dense(5) → softmax.
pub fn lyric_model_layers(id_space: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::Embedding {
            vocab: id_space,
            dim: 32,
        },
        LayerSpec::Conv1d {
            in_channels: 32,
            filters: 64,
            width: 3,
        },
        LayerSpec::Relu,
        LayerSpec::GlobalMaxPool,
        LayerSpec::Dense {
            inputs: 64,
            outputs: 64,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            inputs: 64,
            outputs: NUM_CLASSES,
        },
        LayerSpec::Softmax,
    ]
}

pub fn lyric_model(id_space: usize, seq_len: usize, seed: u64) -> Result<Model, NnError> {
    Model::new(vec![seq_len], lyric_model_layers(id_space), seed)
}

/// 48×48×1 → conv2d(8, 3×3) → relu → maxpool(2) → conv2d(16, 3×3) → relu →
/// maxpool(2) → dense(64) → relu → dense(5) → softmax.
pub fn mood_image_layers() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv2d {
            in_channels: 1,
            filters: 8,
            kernel: 3,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool2d { window: 2 },
        LayerSpec::Conv2d {
            in_channels: 8,
            filters: 16,
            kernel: 3,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool2d { window: 2 },
        LayerSpec::Dense {
            inputs: 16 * 10 * 10,
            outputs: 64,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            inputs: 64,
            outputs: NUM_CLASSES,
        },
        LayerSpec::Softmax,
    ]
}

pub fn mood_image_model(seed: u64) -> Result<Model, NnError> {
    Model::new(vec![1, IMAGE_SIDE, IMAGE_SIDE], mood_image_layers(), seed)
}

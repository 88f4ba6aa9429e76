//! The OmniGait network and its two-stream cross-modal variant.
//!
//! Tensors are `[N, C, H, W]` with the frames of one sequence stored
//! consecutively; public entry points take `[B, T, C, H, W]` clips.

mod checkpoint;
mod config;
mod fusion;
mod head;
mod layers;
mod network;
mod pooling;

pub use checkpoint::{file_sha256, Checkpoint, CheckpointError, MAGIC, MODEL_PREFIX, VERSION};
pub use config::{ModelConfig, Variant};
pub use fusion::{softmax2, Fusion, FusionCache};
pub use head::{Head, HeadCache, HeadOutput};
pub use layers::{BackboneCache, Backbone, BasicBlock, ConvBn, Encoder};
pub use network::{OmniGait, Stream, TrainBatch, TrainCache, TrainOutput};
pub use pooling::{hpp, hpp_backward, temporal_pool, temporal_pool_backward, HppCache, TemporalCache};

use thiserror::Error;

use crate::dataset::Modality;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("modality {0} is not image based and has no encoder")]
    UnsupportedModality(Modality),
    #[error("modality {0} is not configured in this model")]
    UnknownModality(Modality),
    #[error("{what}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        what: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("empty input")]
    EmptyInput,
    #[error("feature height {height} cannot be split into {parts} parts")]
    IndivisibleHeight { height: usize, parts: usize },
    #[error("operation needs the {expected:?} variant")]
    WrongVariant { expected: Variant },
    #[error("cannot fuse {0} with itself")]
    SameModalityPair(Modality),
}

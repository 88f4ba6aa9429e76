//! PK batch sampling, multi-modal batch composition, the optimization loop
//! and training checkpoints.

mod data;
mod fit;
mod optim;
mod sampler;

pub use data::{compose_batch, compose_omni_batch, omni_streams, SequenceStore};
pub use fit::{
    fit, lr_at, read_log, save_checkpoint, load_checkpoint, train_step, FitOutcome, LogRow, StepReport, TrainState,
    FINAL_CHECKPOINT, LOG_FILE, LOG_HEADER,
};
pub use optim::{Sgd, OPTIM_PREFIX};
pub use sampler::{pk_sample, recordings, window, ClassMap, Clip};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Modality, StorageError};
use crate::losses::{LossError, DEFAULT_MARGIN};
use crate::model::{CheckpointError, ModelError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("batch needs {needed} identities, manifest has {available}")]
    TooFewIdentities { needed: usize, available: usize },
    #[error("missing sequences: {}", .0.join(", "))]
    MissingModality(Vec<String>),
    #[error("subject {0} has no class index")]
    UnknownSubject(String),
    #[error("modality {0} has no image frames")]
    NotAnImageModality(Modality),
    #[error("anchor modality {0} is not among the trained modalities")]
    AnchorNotTrained(Modality),
    #[error("non-finite loss at step {step}: stream {stream}, component {component}")]
    NonFiniteLoss { step: u64, stream: String, component: String },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// `p` identities with `k` clips of `t` frames each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchSpec {
    pub p: usize,
    pub k: usize,
    pub t: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        BatchSpec { p: 8, k: 4, t: 16 }
    }
}

impl BatchSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.p < 2 || self.k < 2 || self.t == 0 {
            return Err(TrainError::InvalidConfig(format!(
                "batch needs p >= 2, k >= 2 and t >= 1, got p={} k={} t={}",
                self.p, self.k, self.t
            )));
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.p * self.k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub total_iterations: u64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Steps after which the learning rate is multiplied by 0.1.
    pub milestones: Vec<u64>,
    pub seed: u64,
    /// Modality fused with every other one.
    pub anchor: Modality,
    pub batch: BatchSpec,
    pub margin: f64,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_iterations: 3000,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            milestones: vec![1000, 2000, 2500],
            seed: 0,
            anchor: Modality::RgbSilhouette,
            batch: BatchSpec::default(),
            margin: DEFAULT_MARGIN,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        self.batch.validate()?;
        if self.total_iterations == 0 {
            return Err(TrainError::InvalidConfig("total_iterations must be at least 1".into()));
        }
        let finite = [self.lr, self.momentum, self.weight_decay, self.margin];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(TrainError::InvalidConfig("lr, momentum, weight_decay and margin must be finite and >= 0".into()));
        }
        Ok(())
    }
}

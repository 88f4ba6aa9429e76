//! Gallery/probe protocols, retrieval metrics with cross-view averaging,
//! and the evaluation artifacts.

mod export;
mod metrics;
mod protocol;
mod run;

pub use export::{
    embeddings_from_bytes, embeddings_to_bytes, export_matrix_csv, modality_matrix, read_embeddings, reports_to_csv,
    write_embeddings,
    Metric, ModalityMatrix,
};
pub use metrics::{average_precision, cross_view_average, distance, distance_matrix, mean_ap, rank1, MeanAp, ViewMatrix};
pub use protocol::{build_protocol, EvalUnit, Mode, Protocol, ProtocolSpec, Route, GALLERY_TRIALS, PROBE_TRIALS};
pub use run::{
    check_model, combine, embed, embed_checkpoint, evaluate, extract_embeddings, matrix_reports, run_eval, ConditionReport, EmbeddingRecord,
    EmbeddingSet, EvalReport,
};

use thiserror::Error;

use crate::dataset::{Modality, StorageError};
use crate::model::{CheckpointError, ModelError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid protocol: {0}")]
    InvalidSpec(String),
    #[error("gallery and probe both use {0}; pick two different modalities")]
    SameModality(Modality),
    #[error("the gallery is empty")]
    EmptyGallery,
    #[error("no probes to evaluate")]
    EmptyProbes,
    #[error("no view pair could be evaluated")]
    AllPairsMissing,
    #[error("feature shapes differ: {expected:?} vs {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("the checkpoint was not trained on {modality} (trained: {})", fmt_mods(.trained))]
    ModalityNotTrained { modality: Modality, trained: Vec<Modality> },
    #[error("fused routes need an omni model with a fusion module")]
    FusionUnavailable,
    #[error("test subjects also appear in training: {}", .0.join(", "))]
    SubjectsOverlap(Vec<String>),
    #[error("sequence {0} is not in the manifest")]
    MissingSequence(String),
    #[error("non-finite embedding for {0}")]
    NonFiniteFeature(String),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
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

fn fmt_mods(m: &[Modality]) -> String {
    m.iter().map(|m| m.tag()).collect::<Vec<_>>().join(", ")
}

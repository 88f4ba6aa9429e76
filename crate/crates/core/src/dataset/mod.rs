//! Domain types, the dataset manifest and on-disk sequence persistence.

mod key;
mod manifest;
mod modality;
mod sequence;
pub mod storage;

pub use key::{
    all_views, is_valid_view, parse_sequence_key, view_index, Condition, KeyError, SequenceMeta,
    NUM_VIEWS, RECORDINGS, VIEW_STEP_DEG,
};
pub use manifest::{
    scan_manifest, Manifest, ManifestEntry, ManifestError, ScanResult, Split, SplitTable,
    INDEX_FILE, SPLITS_FILE,
};
pub use modality::{Modality, UnknownModality};
pub use sequence::{Frames, GaitSequence, PointFrame, SequenceError, FRAME_SIZE};
pub use storage::StorageError;

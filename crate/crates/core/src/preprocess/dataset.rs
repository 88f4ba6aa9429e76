use std::path::Path;

use ndarray::{Array3, Array4, Axis};

use super::{project_depth, roi_filter, PreprocessConfig, ProjectError};
use crate::dataset::storage::write_sequence;
use crate::dataset::{
    Frames, GaitSequence, Manifest, ManifestEntry, ManifestError, Modality, SplitTable, StorageError, SPLITS_FILE,
};

#[derive(Debug, thiserror::Error)]
pub enum PreprocessError {
    #[error("the dataset holds no lidar or radar point sequences")]
    NoPointSequences,
    #[error("{key} frame {frame}: {source}")]
    Projection {
        key: String,
        frame: usize,
        source: ProjectError,
    },
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

/// Projected-depth counterpart of a point modality.
pub fn projected_modality(points: Modality) -> Option<Modality> {
    match points {
        Modality::LidarPoints => Some(Modality::LidarProjDepth),
        Modality::RadarPoints => Some(Modality::RadarProjDepth),
        _ => None,
    }
}

/// Cleans one point sequence (full cleaning for LiDAR, region of interest
/// only for the sparse radar) and projects every frame.
pub fn project_point_sequence(seq: &GaitSequence, cfg: &PreprocessConfig) -> Result<Array4<f32>, PreprocessError> {
    let frames = match &seq.frames {
        Frames::Points(f) => f,
        Frames::Image(_) => return Err(PreprocessError::NoPointSequences),
    };
    let proj = cfg.sparse_projection();
    let imgs = frames
        .iter()
        .enumerate()
        .map(|(t, cloud)| {
            let kept = if seq.meta.modality == Modality::LidarPoints {
                cfg.clean_cloud(cloud)
            } else {
                roi_filter(cloud, &cfg.roi)
            };
            project_depth(&kept, &proj).map_err(|source| PreprocessError::Projection {
                key: seq.meta.key(),
                frame: t,
                source,
            })
        })
        .collect::<Result<Vec<Array3<f32>>, _>>()?;
    let views: Vec<_> = imgs.iter().map(|a| a.view()).collect();
    Ok(ndarray::stack(Axis(0), &views).expect("frames share a shape"))
}

/// Writes projected-depth sequences for every stored point sequence of
/// `src` into a new dataset at `out`, with the source's split table.
pub fn project_point_dataset(src: &Manifest, cfg: &PreprocessConfig, out: &Path) -> Result<Manifest, PreprocessError> {
    let mut entries = Vec::new();
    for e in src.entries() {
        let Some(target) = projected_modality(e.meta.modality) else {
            continue;
        };
        let seq = src.load(e)?;
        let frames = project_point_sequence(&seq, cfg)?;
        let projected = GaitSequence::new(e.meta.with_modality(target), Frames::Image(frames))
            .expect("projected frames are 64x64");
        let rel = write_sequence(out, &projected)?;
        entries.push(ManifestEntry {
            meta: projected.meta.clone(),
            rel_path: rel,
            frame_count: projected.frame_count(),
        });
        log::debug!("projected {}", e.meta.key());
    }
    if entries.is_empty() {
        return Err(PreprocessError::NoPointSequences);
    }
    if src.root.join(SPLITS_FILE).exists() {
        SplitTable::read(&src.root)?.write(out)?;
    }
    let manifest = Manifest::new(out, entries)?;
    manifest.write_index()?;
    Ok(manifest)
}

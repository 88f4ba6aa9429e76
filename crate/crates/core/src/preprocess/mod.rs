//! Per-sensor pipelines turning raw renders and point clouds into aligned
//! 64x64 network inputs.

mod align;
mod dataset;
mod events;
mod heatmap;
mod points;
mod project;

pub use align::{normalize_silhouette, AlignError, AlignedFrames, Alignment};
pub use dataset::{project_point_dataset, project_point_sequence, projected_modality, PreprocessError};
pub use events::{simulate_events, LOG_FLOOR};
pub use heatmap::{pose_to_heatmaps, BONES, NUM_JOINTS};
pub use points::{
    cluster_labels, keep_main_cluster, largest_label, remove_ground, roi_filter, InvalidRoi, Roi,
};
pub use project::{
    align_by_channel, align_with, encode_depth, project_depth, rasterize_depth, ProjectError,
    ProjectionConfig, MAX_CANVAS,
};

use serde::{Deserialize, Serialize};

/// Every tunable constant of the preprocessing pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub roi: Roi,
    pub z_threshold: f32,
    pub eps: f32,
    pub min_pts: usize,
    pub sigma: f32,
    pub event_threshold: f32,
    pub projection: ProjectionConfig,
    /// Pixel pitch used when projecting sparse LiDAR and radar clouds.
    pub sparse_pitch: f32,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            roi: Roi::new([-1.5, 3.0, -0.5], [1.5, 9.0, 2.5]).expect("valid default ROI"),
            z_threshold: 0.05,
            eps: 0.12,
            min_pts: 4,
            sigma: 2.0,
            event_threshold: 0.1,
            projection: ProjectionConfig::default(),
            sparse_pitch: 0.03,
        }
    }
}

impl PreprocessConfig {
    /// Region of interest, floor removal and main-cluster extraction.
    pub fn clean_cloud(&self, raw: &[[f32; 3]]) -> Vec<[f32; 3]> {
        let boxed = roi_filter(raw, &self.roi);
        let above = remove_ground(&boxed, self.z_threshold);
        keep_main_cluster(&above, self.eps, self.min_pts)
    }

    pub fn sparse_projection(&self) -> ProjectionConfig {
        ProjectionConfig {
            pitch: self.sparse_pitch,
            ..self.projection
        }
    }
}

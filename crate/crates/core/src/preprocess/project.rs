//! Orthographic depth projection of sensor-frame point clouds.
//!
//! Sensor frame: `x` lateral (image columns), `y` range away from the sensor,
//! `z` up (image rows run downwards).

use ndarray::{s, Array2, Array3};
use serde::{Deserialize, Serialize};

use super::align::Alignment;
use crate::dataset::FRAME_SIZE;

/// Canvas side length beyond which a cloud is rejected as degenerate.
pub const MAX_CANVAS: usize = 4096;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProjectError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("invalid projection config: {0}")]
    InvalidConfig(String),
    #[error("cloud spans {0} pixels, more than the {MAX_CANVAS} allowed")]
    CanvasTooLarge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionConfig {
    /// Meters per pixel.
    pub pitch: f32,
    pub d_near: f32,
    pub d_far: f32,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        ProjectionConfig {
            pitch: 0.02,
            d_near: 4.5,
            d_far: 7.5,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<(), ProjectError> {
        if !(self.pitch > 0.0 && self.pitch.is_finite()) {
            return Err(ProjectError::InvalidConfig(format!("pitch {} must be positive", self.pitch)));
        }
        if !(self.d_near < self.d_far) {
            return Err(ProjectError::InvalidConfig(format!(
                "d_near {} must be below d_far {}",
                self.d_near, self.d_far
            )));
        }
        Ok(())
    }

    /// Linear depth-to-intensity map: `d_near -> 1`, `d_far -> 0`, clamped.
    pub fn intensity(&self, depth: f32) -> f32 {
        ((self.d_far - depth) / (self.d_far - self.d_near)).clamp(0.0, 1.0)
    }
}

/// Three-channel encoding of one intensity value. The constant third channel
/// keeps far-away foreground distinguishable from background.
pub fn encode_depth(v: f32) -> [f32; 3] {
    [v, 1.0 - v, 1.0]
}

/// Raw z-buffered projection before alignment: `3 x H x W`, background 0.
pub fn rasterize_depth(points: &[[f32; 3]], cfg: &ProjectionConfig) -> Result<Array3<f32>, ProjectError> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(ProjectError::EmptyCloud);
    }
    let xmin = points.iter().map(|p| p[0]).fold(f32::INFINITY, f32::min);
    let zmax = points.iter().map(|p| p[2]).fold(f32::NEG_INFINITY, f32::max);
    let cells: Vec<(usize, usize)> = points
        .iter()
        .map(|p| {
            let c = ((p[0] - xmin) / cfg.pitch).round() as usize;
            let r = ((zmax - p[2]) / cfg.pitch).round() as usize;
            (r, c)
        })
        .collect();
    let h = cells.iter().map(|c| c.0).max().unwrap() + 1;
    let w = cells.iter().map(|c| c.1).max().unwrap() + 1;
    if h.max(w) > MAX_CANVAS {
        return Err(ProjectError::CanvasTooLarge(h.max(w)));
    }
    let mut nearest = Array2::from_elem((h, w), f32::INFINITY);
    for (p, &(r, c)) in points.iter().zip(&cells) {
        if p[1] < nearest[(r, c)] {
            nearest[(r, c)] = p[1];
        }
    }
    let mut img = Array3::zeros((3, h, w));
    for ((r, c), &d) in nearest.indexed_iter() {
        if d.is_finite() {
            let e = encode_depth(cfg.intensity(d));
            for (ch, v) in e.iter().enumerate() {
                img[(ch, r, c)] = *v;
            }
        }
    }
    Ok(img)
}

/// Aligns a raw `C x H x W` frame with the alignment of its own nonzero
/// pixels in channel `mask_channel`.
pub fn align_by_channel(img: &Array3<f32>, mask_channel: usize) -> Option<Array3<f32>> {
    let a = Alignment::from_mask(img.slice(s![mask_channel, .., ..]))?;
    Some(align_with(img, &a))
}

/// Resamples every channel of a `C x H x W` frame with a given alignment.
pub fn align_with(img: &Array3<f32>, a: &Alignment) -> Array3<f32> {
    let c = img.shape()[0];
    let mut out = Array3::zeros((c, FRAME_SIZE, FRAME_SIZE));
    for ch in 0..c {
        out.slice_mut(s![ch, .., ..]).assign(&a.apply(img.slice(s![ch, .., ..])));
    }
    out
}

/// Projected-depth image: z-buffer, linear depth encoding, then the
/// silhouette alignment onto `3 x 64 x 64`.
pub fn project_depth(points: &[[f32; 3]], cfg: &ProjectionConfig) -> Result<Array3<f32>, ProjectError> {
    let raw = rasterize_depth(points, cfg)?;
    Ok(align_by_channel(&raw, 2).expect("a nonempty cloud rasterizes to a nonempty canvas"))
}

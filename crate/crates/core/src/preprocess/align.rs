//! Gait-style frame alignment: crop to the foreground's vertical extent,
//! scale to 64 rows, center on the foreground centroid column.
//!
//! All geometry is computed relative to the foreground bounding box, which
//! makes the output exactly invariant to integer translations of the input.

use ndarray::{Array2, Array4, ArrayView2, ArrayView3};

use crate::dataset::FRAME_SIZE;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AlignError {
    #[error("every frame is empty; nothing to align")]
    AllFramesEmpty,
}

/// Crop/scale/shift mapping of one raw frame onto the 64x64 canvas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub top: usize,
    pub rows: usize,
    pub left: usize,
    /// Foreground centroid column relative to `left`, in continuous pixel
    /// units (pixel `j` spans `[j, j + 1)`).
    pub center: f64,
    width: usize,
}

impl Alignment {
    /// Alignment of a mask whose foreground is every nonzero pixel.
    pub fn from_mask(mask: ArrayView2<f32>) -> Option<Alignment> {
        let (h, w) = mask.dim();
        let mut top = usize::MAX;
        let mut bottom = 0;
        let mut left = usize::MAX;
        let mut count = 0u64;
        for ((r, c), &v) in mask.indexed_iter() {
            if v != 0.0 {
                top = top.min(r);
                bottom = bottom.max(r);
                left = left.min(c);
                count += 1;
            }
        }
        if count == 0 {
            return None;
        }
        let mut sum = 0u64;
        for ((_, c), &v) in mask.indexed_iter() {
            if v != 0.0 {
                sum += (c - left) as u64;
            }
        }
        debug_assert!(bottom < h);
        Some(Alignment {
            top,
            rows: bottom - top + 1,
            left,
            center: sum as f64 / count as f64 + 0.5,
            width: w,
        })
    }

    /// Output pixels per source pixel.
    pub fn scale(&self) -> f64 {
        FRAME_SIZE as f64 / self.rows as f64
    }

    /// Area-averaged resample of one channel.
    pub fn apply(&self, src: ArrayView2<f32>) -> Array2<f32> {
        assert_eq!(src.ncols(), self.width, "channel and mask widths differ");
        let n = FRAME_SIZE;
        let row_w: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|o| {
                let a = o as f64 / self.scale();
                let b = (o + 1) as f64 / self.scale();
                overlaps(a, b, 0, self.rows as i64)
                    .into_iter()
                    .map(|(r, w)| (r as usize + self.top, w))
                    .collect()
            })
            .collect();
        let lo = -(self.left as i64);
        let hi = (self.width - self.left) as i64;
        let col_w: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|o| {
                let a = self.center + (o as f64 - n as f64 / 2.0) / self.scale();
                let b = self.center + (o as f64 + 1.0 - n as f64 / 2.0) / self.scale();
                overlaps(a, b, lo, hi)
                    .into_iter()
                    .map(|(c, w)| ((c - lo) as usize, w))
                    .collect()
            })
            .collect();
        let mut out = Array2::zeros((n, n));
        for (oy, rw) in row_w.iter().enumerate() {
            for (ox, cw) in col_w.iter().enumerate() {
                let mut acc = 0.0f64;
                for &(r, wr) in rw {
                    let mut line = 0.0f64;
                    for &(c, wc) in cw {
                        line += wc * src[(r, c)] as f64;
                    }
                    acc += wr * line;
                }
                out[(oy, ox)] = acc as f32;
            }
        }
        out
    }

    /// Maps a raw point (continuous pixel coordinates, `x` along columns)
    /// to normalized output coordinates where `u * 64` is a pixel index.
    pub fn map_point(&self, x: f64, y: f64) -> [f32; 2] {
        let s = self.scale();
        let ox = (x - self.left as f64 - self.center) * s + FRAME_SIZE as f64 / 2.0;
        let oy = (y - self.top as f64) * s;
        [
            ((ox - 0.5) / FRAME_SIZE as f64) as f32,
            ((oy - 0.5) / FRAME_SIZE as f64) as f32,
        ]
    }
}

/// Integer cells `[i, i + 1)` within `[lo, hi)` overlapping `[a, b)`, with
/// the overlap expressed as a fraction of `b - a`.
fn overlaps(a: f64, b: f64, lo: i64, hi: i64) -> Vec<(i64, f64)> {
    let len = b - a;
    let first = (a.floor() as i64).max(lo);
    let last = (b.ceil() as i64).min(hi);
    (first..last)
        .filter_map(|i| {
            let ov = (b.min((i + 1) as f64) - a.max(i as f64)) / len;
            (ov > 0.0).then_some((i, ov))
        })
        .collect()
}

/// Aligned silhouettes plus the bookkeeping needed to align companion
/// modalities of the same frames.
#[derive(Debug, Clone)]
pub struct AlignedFrames {
    /// `T' x 1 x 64 x 64`.
    pub frames: Array4<f32>,
    /// Raw frame index of every output frame.
    pub kept: Vec<usize>,
    pub alignments: Vec<Alignment>,
}

/// Aligns a stack of `T x H x W` masks; empty frames are dropped.
pub fn normalize_silhouette(masks: ArrayView3<f32>) -> Result<AlignedFrames, AlignError> {
    let mut kept = Vec::new();
    let mut alignments = Vec::new();
    for (t, m) in masks.outer_iter().enumerate() {
        match Alignment::from_mask(m) {
            Some(a) => {
                kept.push(t);
                alignments.push(a);
            }
            None => log::warn!("dropping empty silhouette frame {t}"),
        }
    }
    if kept.is_empty() {
        return Err(AlignError::AllFramesEmpty);
    }
    let n = FRAME_SIZE;
    let mut frames = Array4::zeros((kept.len(), 1, n, n));
    for (i, (&t, a)) in kept.iter().zip(&alignments).enumerate() {
        let out = a.apply(masks.index_axis(ndarray::Axis(0), t));
        frames.slice_mut(ndarray::s![i, 0, .., ..]).assign(&out);
    }
    Ok(AlignedFrames {
        frames,
        kept,
        alignments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{s, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_frame_maps_to_all_ones() {
        let masks = Array3::<f32>::ones((1, 100, 100));
        let out = normalize_silhouette(masks.view()).unwrap();
        assert!(out.frames.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn centered_square_centroid() {
        let mut masks = Array3::<f32>::zeros((1, 80, 120));
        masks.slice_mut(s![0, 20..60, 30..70]).fill(1.0);
        let out = normalize_silhouette(masks.view()).unwrap();
        let f = out.frames.slice(s![0, 0, .., ..]);
        let (mut sum, mut tot) = (0.0f64, 0.0f64);
        for ((_, c), &v) in f.indexed_iter() {
            sum += v as f64 * (c as f64 + 0.5);
            tot += v as f64;
        }
        assert!((sum / tot - 32.0).abs() <= 1.0, "centroid {}", sum / tot);
    }

    #[test]
    fn translation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = Array3::<f32>::zeros((1, 90, 90));
        for r in 10..50 {
            for c in 15..40 {
                if rng.random_bool(0.7) {
                    a[(0, r, c)] = 1.0;
                }
            }
        }
        let mut b = Array3::<f32>::zeros((1, 90, 90));
        b.slice_mut(s![0, 15..55, 24..49]).assign(&a.slice(s![0, 10..50, 15..40]));
        let fa = normalize_silhouette(a.view()).unwrap().frames;
        let fb = normalize_silhouette(b.view()).unwrap().frames;
        assert_eq!(fa, fb);
    }

    #[test]
    fn empty_frames_are_dropped() {
        let mut masks = Array3::<f32>::zeros((3, 10, 10));
        masks[(1, 4, 4)] = 1.0;
        let out = normalize_silhouette(masks.view()).unwrap();
        assert_eq!(out.kept, vec![1]);
        let empty = Array3::<f32>::zeros((2, 10, 10));
        assert_eq!(normalize_silhouette(empty.view()).unwrap_err(), AlignError::AllFramesEmpty);
    }

    #[test]
    fn mapped_point_lands_on_resampled_pixel() {
        let mut masks = Array3::<f32>::zeros((1, 128, 128));
        masks.slice_mut(s![0, 20..84, 50..70]).fill(1.0);
        let a = Alignment::from_mask(masks.slice(s![0, .., ..])).unwrap();
        // the bottom-right foreground pixel center
        let [u, v] = a.map_point(69.5, 83.5);
        assert!((v * 64.0 - 63.0).abs() < 1e-4);
        assert!((u * 64.0 - 41.0).abs() < 1e-4);
    }
}

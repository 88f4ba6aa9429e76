use ndarray::Array4;

use crate::dataset::FRAME_SIZE;

pub const NUM_JOINTS: usize = 17;

/// Limb topology over the 17 COCO keypoints
/// (nose, eyes, ears, shoulders, elbows, wrists, hips, knees, ankles).
pub const BONES: [(usize, usize); 16] = [
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (5, 6),
    (5, 7),
    (7, 9),
    (6, 8),
    (8, 10),
    (5, 11),
    (6, 12),
    (11, 12),
    (11, 13),
    (13, 15),
    (12, 14),
    (14, 16),
];

/// Joint and limb heatmaps, `T x 2 x 64 x 64`.
///
/// Joints are in normalized coordinates where `u * 64` is a pixel index.
/// Channel 0 sums isotropic Gaussians at the joints, channel 1 sums Gaussian
/// profiles of the distance to each bone segment; both are clamped to 1.
pub fn pose_to_heatmaps(joints: &[[[f32; 2]; NUM_JOINTS]], sigma: f32) -> Array4<f32> {
    let n = FRAME_SIZE;
    let mut out = Array4::zeros((joints.len(), 2, n, n));
    let inv = 1.0 / (2.0 * sigma as f64 * sigma as f64);
    for (t, frame) in joints.iter().enumerate() {
        let px: Vec<[f64; 2]> = frame
            .iter()
            .map(|j| [j[0] as f64 * n as f64, j[1] as f64 * n as f64])
            .collect();
        for r in 0..n {
            for c in 0..n {
                let p = [c as f64, r as f64];
                let joint: f64 = px.iter().map(|j| (-d2(p, *j) * inv).exp()).sum();
                let limb: f64 = BONES
                    .iter()
                    .map(|&(a, b)| (-seg_d2(p, px[a], px[b]) * inv).exp())
                    .sum();
                out[(t, 0, r, c)] = joint.min(1.0) as f32;
                out[(t, 1, r, c)] = limb.min(1.0) as f32;
            }
        }
    }
    out
}

fn d2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn seg_d2(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return d2(p, a);
    }
    let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
    d2(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn far_away() -> [[f32; 2]; NUM_JOINTS] {
        [[-10.0, -10.0]; NUM_JOINTS]
    }

    #[test]
    fn single_joint_peak() {
        let mut j = far_away();
        j[0] = [0.5, 0.5];
        let h = pose_to_heatmaps(&[j], 2.0);
        assert_eq!(h[(0, 0, 32, 32)], 1.0);
        let (mut best, mut arg) = (f32::MIN, (0, 0));
        for r in 0..64 {
            for c in 0..64 {
                if h[(0, 0, r, c)] > best {
                    best = h[(0, 0, r, c)];
                    arg = (r, c);
                }
            }
        }
        assert_eq!(arg, (32, 32));
    }

    #[test]
    fn narrow_sigma_marks_one_pixel_per_joint() {
        let mut j = far_away();
        let spots = [(10, 12), (40, 20), (55, 50)];
        for (k, &(x, y)) in spots.iter().enumerate() {
            j[k + 5] = [x as f32 / 64.0, y as f32 / 64.0];
        }
        let h = pose_to_heatmaps(&[j], 0.5);
        let hot = (0..64 * 64).filter(|i| h[(0, 0, i / 64, i % 64)] >= 0.5).count();
        assert_eq!(hot, spots.len());
    }

    #[test]
    fn overlapping_joints_are_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let frames: Vec<[[f32; 2]; NUM_JOINTS]> = (0..4)
            .map(|_| std::array::from_fn(|_| [rng.random_range(0.45..0.55), rng.random_range(0.45..0.55)]))
            .collect();
        let h = pose_to_heatmaps(&frames, 3.0);
        assert!(h.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(h.iter().any(|&v| v == 1.0));
    }

    #[test]
    fn limb_channel_follows_bone() {
        let mut j = [[0.25, 0.5]; NUM_JOINTS];
        j[12] = [0.75, 0.5];
        let h = pose_to_heatmaps(&[j], 1.0);
        for c in 16..=48 {
            assert!(h[(0, 1, 32, c)] >= 0.99);
        }
        assert!(h[(0, 1, 10, 32)] < 1e-6);
    }
}

use std::f32::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Condition;

/// Index names for [`BodyParams::limb_lengths`].
pub mod length {
    pub const UPPER_ARM: usize = 0;
    pub const FOREARM: usize = 1;
    pub const THIGH: usize = 2;
    pub const SHIN: usize = 3;
    pub const TORSO: usize = 4;
    pub const HEAD_RADIUS: usize = 5;
}

/// Index names for [`BodyParams::limb_radii`].
pub mod radius {
    pub const UPPER_ARM: usize = 0;
    pub const FOREARM: usize = 1;
    pub const THIGH: usize = 2;
    pub const SHIN: usize = 3;
    pub const TORSO: usize = 4;
    pub const NECK: usize = 5;
}

pub const HEIGHT_RANGE: (f32, f32) = (1.5, 1.95);
pub const STRIDE_FREQ_RANGE: (f32, f32) = (0.7, 1.3);
pub const CLOTHING_RANGE: (f32, f32) = (0.85, 1.15);
/// Clothing scales closer to 1 than this are pushed outwards so changed
/// clothes always change the silhouette noticeably.
pub const MIN_CLOTHING_CHANGE: f32 = 0.05;
pub const CLOTHING_JITTER: f32 = 0.05;

/// Fixed fractions of body height.
pub const ANKLE_HEIGHT: f32 = 0.06;
pub const NECK_LENGTH: f32 = 0.035;

/// A walking subject: identity fields plus per-recording state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyParams {
    pub height_m: f32,
    pub limb_lengths: [f32; 6],
    pub limb_radii: [f32; 6],
    pub stride_freq_hz: f32,
    pub phase0: f32,
    pub bag_offset: Option<[f32; 3]>,
    pub clothing_scale: f32,
    /// Per-limb multiplier on top of `clothing_scale`.
    pub clothing_jitter: [f32; 6],
}

impl BodyParams {
    /// Same identity fields.
    pub fn same_identity(&self, other: &BodyParams) -> bool {
        self.height_m == other.height_m
            && self.limb_lengths == other.limb_lengths
            && self.limb_radii == other.limb_radii
            && self.stride_freq_hz == other.stride_freq_hz
    }

    /// Radii after clothing.
    pub fn effective_radii(&self) -> [f32; 6] {
        std::array::from_fn(|i| self.limb_radii[i] * self.clothing_scale * self.clothing_jitter[i])
    }

    /// Peak hip flexion in radians; faster walkers take larger strides.
    pub fn swing_amplitude(&self) -> f32 {
        let (lo, hi) = STRIDE_FREQ_RANGE;
        0.28 + 0.25 * (self.stride_freq_hz - lo) / (hi - lo)
    }

    pub fn leg_length(&self) -> f32 {
        self.limb_lengths[length::THIGH] + self.limb_lengths[length::SHIN]
    }

    /// Forward speed in m/s: two steps per stride cycle.
    pub fn walking_speed(&self) -> f32 {
        4.0 * self.leg_length() * self.swing_amplitude().sin() * self.stride_freq_hz
    }

    /// This identity prepared for one recording.
    ///
    /// The phase is drawn from `noise_seed`. BG attaches a bag, CL rescales
    /// the limb radii; NM leaves the body untouched.
    pub fn for_recording(&self, condition: Condition, noise_seed: u64) -> BodyParams {
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let mut p = BodyParams {
            phase0: rng.random_range(0.0..TAU),
            bag_offset: None,
            clothing_scale: 1.0,
            clothing_jitter: [1.0; 6],
            ..self.clone()
        };
        match condition {
            Condition::Nm => {}
            Condition::Bg => {
                p.bag_offset = Some([
                    -(self.limb_radii[radius::TORSO] + rng.random_range(0.06..0.1)),
                    rng.random_range(-0.03..0.03),
                    rng.random_range(-0.05..0.05),
                ]);
            }
            Condition::Cl => {
                let change = rng.random_range(MIN_CLOTHING_CHANGE..=CLOTHING_RANGE.1 - 1.0);
                p.clothing_scale = if rng.random_bool(0.5) { 1.0 + change } else { 1.0 - change };
                p.clothing_jitter =
                    std::array::from_fn(|_| 1.0 + rng.random_range(-CLOTHING_JITTER..=CLOTHING_JITTER));
            }
        }
        p
    }
}

/// Deterministic random identity.
pub fn sample_identity(seed: u64) -> BodyParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.random_range(HEIGHT_RANGE.0..=HEIGHT_RANGE.1);
    let upper = h * rng.random_range(0.165..0.19);
    let fore = h * rng.random_range(0.145..0.165);
    let thigh = h * rng.random_range(0.235..0.26);
    let shin = h * rng.random_range(0.225..0.25);
    let head_r = h * rng.random_range(0.058..0.066);
    let torso = h - h * ANKLE_HEIGHT - thigh - shin - h * NECK_LENGTH - 2.0 * head_r;
    let limb_radii = [
        rng.random_range(0.040..0.055),
        rng.random_range(0.032..0.045),
        rng.random_range(0.065..0.085),
        rng.random_range(0.045..0.060),
        rng.random_range(0.12..0.16),
        rng.random_range(0.045..0.06),
    ];
    BodyParams {
        height_m: h,
        limb_lengths: [upper, fore, thigh, shin, torso, head_r],
        limb_radii,
        stride_freq_hz: rng.random_range(STRIDE_FREQ_RANGE.0..=STRIDE_FREQ_RANGE.1),
        phase0: rng.random_range(0.0..TAU),
        bag_offset: None,
        clothing_scale: 1.0,
        clothing_jitter: [1.0; 6],
    }
}

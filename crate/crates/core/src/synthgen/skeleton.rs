//! Articulated sinusoidal walking model over the 17 COCO keypoints.
//!
//! Body frame: the subject walks along `+x`, `+y` is the subject's left,
//! `+z` is up and the floor is `z = 0`.

use std::f32::consts::{PI, TAU};

use super::body::{length, radius, BodyParams, ANKLE_HEIGHT, NECK_LENGTH};
use crate::dataset::Condition;
use crate::preprocess::NUM_JOINTS;

pub type Vec3 = [f32; 3];

pub const NOSE: usize = 0;
pub const L_EYE: usize = 1;
pub const R_EYE: usize = 2;
pub const L_EAR: usize = 3;
pub const R_EAR: usize = 4;
pub const L_SHOULDER: usize = 5;
pub const R_SHOULDER: usize = 6;
pub const L_ELBOW: usize = 7;
pub const R_ELBOW: usize = 8;
pub const L_WRIST: usize = 9;
pub const R_WRIST: usize = 10;
pub const L_HIP: usize = 11;
pub const R_HIP: usize = 12;
pub const L_KNEE: usize = 13;
pub const R_KNEE: usize = 14;
pub const L_ANKLE: usize = 15;
pub const R_ANKLE: usize = 16;

/// Bag used for BG when the parameters carry no explicit offset.
pub const DEFAULT_BAG_OFFSET: Vec3 = [-0.22, 0.0, 0.0];

#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub joints: [Vec3; NUM_JOINTS],
    pub pelvis: Vec3,
    pub neck: Vec3,
    pub head: Vec3,
    /// Spine midpoint, where the bag hangs from.
    pub torso: Vec3,
    /// Bag attachment point, BG only.
    pub bag: Option<Vec3>,
    /// Joint angles, exposed for tests.
    pub hip_angles: [f32; 2],
}

/// Gait phase in radians at (possibly fractional) frame `t`.
pub fn phase(params: &BodyParams, t: f64, fps: f64) -> f32 {
    (params.phase0 as f64 + TAU as f64 * params.stride_freq_hz as f64 * t / fps) as f32
}

/// Sagittal-plane direction rotated forward by `angle` from straight down.
fn down(angle: f32) -> Vec3 {
    [angle.sin(), 0.0, -angle.cos()]
}

fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: Vec3, s: f32) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub const NEUTRAL_HIP: f32 = 0.0;

/// Joint positions at frame `t`.
pub fn synth_skeleton(params: &BodyParams, condition: Condition, t: f64, fps: f64) -> Pose {
    let h = params.height_m;
    let amp = params.swing_amplitude();
    let phi = phase(params, t, fps);
    let thigh = params.limb_lengths[length::THIGH];
    let shin = params.limb_lengths[length::SHIN];
    let upper = params.limb_lengths[length::UPPER_ARM];
    let fore = params.limb_lengths[length::FOREARM];
    let head_r = params.limb_lengths[length::HEAD_RADIUS];
    let torso_r = params.limb_radii[radius::TORSO];

    // left leg at phase phi, right leg half a cycle later
    let leg = |p: f32| {
        let hip = NEUTRAL_HIP + amp * p.sin();
        let knee = 0.1 + 0.45 * (0.5 - 0.5 * (p + 1.2).cos());
        (hip, knee)
    };
    let (hip_l, knee_l) = leg(phi);
    let (hip_r, knee_r) = leg(phi + PI);
    let drop = |hip: f32, knee: f32| thigh * hip.cos() + shin * (hip - knee).cos();
    let pelvis_z = h * ANKLE_HEIGHT + drop(hip_l, knee_l).max(drop(hip_r, knee_r));

    let x = params.walking_speed() * (t / fps) as f32;
    let pelvis = [x, 0.0, pelvis_z];
    let hip_half = 0.8 * torso_r;
    let shoulder_half = 1.4 * torso_r;

    let mut j = [[0.0f32; 3]; NUM_JOINTS];
    for (side, hip_a, knee_a, s) in [(0, hip_l, knee_l, 1.0f32), (1, hip_r, knee_r, -1.0)] {
        let hip = add(pelvis, [0.0, s * hip_half, 0.0]);
        let knee = add(hip, scale(down(hip_a), thigh));
        let ankle = add(knee, scale(down(hip_a - knee_a), shin));
        j[L_HIP + side] = hip;
        j[L_KNEE + side] = knee;
        j[L_ANKLE + side] = ankle;
    }

    let torso_len = params.limb_lengths[length::TORSO];
    let neck = add(pelvis, [0.0, 0.0, torso_len]);
    let arm_swing = 0.8 * amp;
    for (side, p, s) in [(0, phi, 1.0f32), (1, phi + PI, -1.0)] {
        // arms swing against the leg on the same side
        let shoulder_a = -arm_swing * p.sin();
        let elbow_a = shoulder_a + 0.25 + 0.2 * (0.5 + 0.5 * (-p.sin()));
        let shoulder = add(neck, [0.0, s * shoulder_half, -0.03 * h]);
        let elbow = add(shoulder, scale(down(shoulder_a), upper));
        let wrist = add(elbow, scale(down(elbow_a), fore));
        j[L_SHOULDER + side] = shoulder;
        j[L_ELBOW + side] = elbow;
        j[L_WRIST + side] = wrist;
    }

    let head = add(neck, [0.0, 0.0, h * NECK_LENGTH + head_r]);
    j[NOSE] = add(head, [0.95 * head_r, 0.0, 0.0]);
    j[L_EYE] = add(head, [0.8 * head_r, 0.35 * head_r, 0.25 * head_r]);
    j[R_EYE] = add(head, [0.8 * head_r, -0.35 * head_r, 0.25 * head_r]);
    j[L_EAR] = add(head, [0.0, head_r, 0.0]);
    j[R_EAR] = add(head, [0.0, -head_r, 0.0]);

    let torso = scale(add(pelvis, neck), 0.5);
    let bag = (condition == Condition::Bg).then(|| add(torso, params.bag_offset.unwrap_or(DEFAULT_BAG_OFFSET)));
    Pose {
        joints: j,
        pelvis,
        neck,
        head,
        torso,
        bag,
        hip_angles: [hip_l, hip_r],
    }
}

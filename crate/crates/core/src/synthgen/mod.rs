//! Deterministic synthetic walkers rendered into every sensor modality.

mod body;
mod generate;
mod render;
pub mod skeleton;

pub use body::{length, radius, sample_identity, BodyParams, CLOTHING_RANGE, HEIGHT_RANGE, STRIDE_FREQ_RANGE};
pub use generate::{
    generate_dataset, mix_seed, recording_seed, render_inner, render_modalities, render_sample,
    subject_identity, trial_seed, MultiModalSample, RadarConfig, Recording, RenderConfig, SynthConfig,
    SynthError,
};
pub use render::{
    body_primitives, lidar_scan, Appearance, CameraConfig, Hit, HitImage, LidarConfig, Material, Primitive,
    RawScan, Scene, SensorPose, Shape,
};
pub use skeleton::{synth_skeleton, Pose};

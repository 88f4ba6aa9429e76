use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::{s, Array3, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::body::{sample_identity, BodyParams};
use super::render::{
    body_primitives, lidar_scan, Appearance, CameraConfig, HitImage, LidarConfig, Scene, SensorPose,
};
use super::skeleton::synth_skeleton;
use crate::dataset::storage::write_sequence;
use crate::dataset::{
    is_valid_view, Condition, Frames, GaitSequence, Manifest, ManifestEntry, ManifestError, Modality,
    SequenceMeta, Split, SplitTable, StorageError, RECORDINGS,
};
use crate::preprocess::{
    align_with, normalize_silhouette, pose_to_heatmaps, project_depth, roi_filter, simulate_events,
    AlignedFrames, PreprocessConfig, ProjectionConfig, NUM_JOINTS,
};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid view {0}: must be a multiple of 36 below 360")]
    InvalidView(u16),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("subject left the sensor field of view at frame {frame} ({what})")]
    EmptyRender { frame: usize, what: &'static str },
    #[error("failed to write dataset: {0}")]
    DiskWriteError(#[from] StorageError),
    #[error("failed to write dataset index: {0}")]
    Index(#[from] ManifestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadarConfig {
    pub min_points: usize,
    pub max_points: usize,
    pub noise: f32,
}

impl Default for RadarConfig {
    fn default() -> Self {
        RadarConfig {
            min_points: 20,
            max_points: 80,
            noise: 0.05,
        }
    }
}

/// Sensor rig and pipeline settings shared by every rendered recording.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub fps: f64,
    /// Horizontal distance from the sensors to the walker, meters.
    pub range: f32,
    pub rgb_camera: CameraConfig,
    pub ir_camera: CameraConfig,
    pub lidar: LidarConfig,
    pub radar: RadarConfig,
    pub preprocess: PreprocessConfig,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            fps: 10.0,
            range: 6.0,
            rgb_camera: CameraConfig {
                pitch: 0.02,
                rows: 120,
                cols: 120,
                top_z: 2.3,
            },
            ir_camera: CameraConfig {
                pitch: 0.025,
                rows: 96,
                cols: 96,
                top_z: 2.3,
            },
            lidar: LidarConfig::default(),
            radar: RadarConfig::default(),
            preprocess: PreprocessConfig::default(),
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if !(self.fps > 0.0) {
            return bad(format!("fps {} must be positive", self.fps));
        }
        if self.radar.min_points == 0 || self.radar.min_points > self.radar.max_points {
            return bad("radar point range must satisfy 1 <= min_points <= max_points".into());
        }
        if !(self.lidar.spacing > 0.0) {
            return bad("lidar spacing must be positive".into());
        }
        self.depth_projection()
            .validate()
            .map_err(|e| SynthError::InvalidConfig(e.to_string()))
    }

    /// Depth-camera projection: one pixel per RGB camera pixel.
    pub fn depth_projection(&self) -> ProjectionConfig {
        ProjectionConfig {
            pitch: self.rgb_camera.pitch,
            ..self.preprocess.projection
        }
    }
}

/// Identifies one walking pass.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Recording {
    pub subject_id: String,
    pub view_deg: u16,
    pub condition: Condition,
    pub trial: u8,
}

impl Recording {
    pub fn meta(&self, modality: Modality) -> SequenceMeta {
        SequenceMeta {
            subject_id: self.subject_id.clone(),
            view_deg: self.view_deg,
            condition: self.condition,
            trial: self.trial,
            modality,
        }
    }
}

/// Every modality of one walking pass, frame-aligned.
#[derive(Debug, Clone)]
pub struct MultiModalSample {
    pub recording: Recording,
    pub sequences: BTreeMap<Modality, GaitSequence>,
    /// Joint positions in RGB camera pixels (`[col, row]`).
    pub joints2d: Vec<[[f32; 2]; NUM_JOINTS]>,
    /// Raw (unaligned) RGB-camera silhouettes, `T x rows x cols`.
    pub raw_silhouettes: Array3<f32>,
    /// Body returns per raw LiDAR scan, before cleanup.
    pub lidar_body_returns: Vec<usize>,
}

impl MultiModalSample {
    pub fn frame_count(&self) -> usize {
        self.joints2d.len()
    }

    pub fn get(&self, m: Modality) -> Option<&GaitSequence> {
        self.sequences.get(&m)
    }
}

/// Renders all modalities of one recording.
pub fn render_sample(
    params: &BodyParams,
    recording: &Recording,
    t_raw: usize,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<MultiModalSample, SynthError> {
    render_modalities(params, recording, t_raw, cfg, seed, &Modality::ALL)
}

/// Colors are drawn from `seed` as well.
pub fn render_modalities(
    params: &BodyParams,
    rec: &Recording,
    t_raw: usize,
    cfg: &RenderConfig,
    seed: u64,
    modalities: &[Modality],
) -> Result<MultiModalSample, SynthError> {
    let look = Appearance::sample(mix_seed(&[seed, 2]));
    render_inner(params, rec, t_raw, cfg, seed, &look, modalities)
}

/// Renders the requested subset of modalities of one recording.
pub fn render_inner(
    params: &BodyParams,
    rec: &Recording,
    t_raw: usize,
    cfg: &RenderConfig,
    seed: u64,
    look: &Appearance,
    modalities: &[Modality],
) -> Result<MultiModalSample, SynthError> {
    if !is_valid_view(rec.view_deg) {
        return Err(SynthError::InvalidView(rec.view_deg));
    }
    if t_raw == 0 {
        return Err(SynthError::InvalidConfig("T_raw must be positive".into()));
    }
    cfg.validate()?;
    let want: BTreeSet<Modality> = modalities.iter().copied().collect();
    let needs = |ms: &[Modality]| ms.iter().any(|m| want.contains(m));
    let need_ir = needs(&[Modality::Ir, Modality::IrSilhouette]);
    let need_lidar = needs(&[
        Modality::LidarPoints,
        Modality::LidarProjDepth,
        Modality::RadarPoints,
        Modality::RadarProjDepth,
    ]);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = cfg.rgb_camera;
    let mut masks = Array3::zeros((t_raw, cam.rows, cam.cols));
    let mut rgb_raw = Vec::with_capacity(t_raw);
    let mut ir_masks = Array3::zeros((t_raw, cfg.ir_camera.rows, cfg.ir_camera.cols));
    let mut ir_raw = Vec::new();
    let mut joints2d = Vec::with_capacity(t_raw);
    let mut depth = Vec::new();
    let mut lidar = Vec::new();
    let mut radar = Vec::new();
    let mut lidar_body_returns = Vec::new();

    for t in 0..t_raw {
        let pose = synth_skeleton(params, rec.condition, t as f64, cfg.fps);
        let sensor = SensorPose::looking_at(pose.pelvis, rec.view_deg as f32, cfg.range);
        let scene = Scene::new(&body_primitives(params, &pose, rec.condition), &sensor);

        let hits = HitImage::render(&scene, &cam);
        let mask = hits.mask();
        if mask.iter().all(|&v| v == 0.0) {
            return Err(SynthError::EmptyRender { frame: t, what: "camera" });
        }
        masks.slice_mut(s![t, .., ..]).assign(&mask);
        rgb_raw.push(hits.color(look));
        joints2d.push(std::array::from_fn(|j| {
            let (x, y) = cam.project(sensor.to_sensor(pose.joints[j]));
            [x as f32, y as f32]
        }));
        if want.contains(&Modality::Depth) {
            let img = project_depth(&hits.dense_cloud(), &cfg.depth_projection())
                .map_err(|_| SynthError::EmptyRender { frame: t, what: "depth camera" })?;
            depth.push(img);
        }
        if need_ir {
            let ir = HitImage::render(&scene, &cfg.ir_camera);
            ir_masks.slice_mut(s![t, .., ..]).assign(&ir.mask());
            ir_raw.push(ir.thermal());
        }
        if need_lidar {
            let scan = lidar_scan(&scene, &cam, &cfg.lidar, cfg.range, &mut rng);
            lidar_body_returns.push(scan.body);
            let clean = cfg.preprocess.clean_cloud(&scan.points);
            if clean.is_empty() {
                return Err(SynthError::EmptyRender { frame: t, what: "lidar" });
            }
            let n = rng
                .random_range(cfg.radar.min_points..=cfg.radar.max_points)
                .min(clean.len());
            let noise = Normal::new(0.0, cfg.radar.noise as f64).expect("finite noise");
            let picked = rand::seq::index::sample(&mut rng, clean.len(), n);
            let mut picked: Vec<usize> = picked.into_iter().collect();
            picked.sort_unstable();
            let noisy: Vec<[f32; 3]> = picked
                .iter()
                .map(|&i| clean[i].map(|v| v + noise.sample(&mut rng) as f32))
                .collect();
            let boxed = roi_filter(&noisy, &cfg.preprocess.roi);
            if boxed.is_empty() {
                return Err(SynthError::EmptyRender { frame: t, what: "radar" });
            }
            lidar.push(clean);
            radar.push(boxed);
        }
    }

    let sil = normalize_silhouette(masks.view())
        .map_err(|_| SynthError::EmptyRender { frame: 0, what: "camera" })?;
    debug_assert_eq!(sil.kept.len(), t_raw);
    let rgb = align_stack(&rgb_raw, &sil);

    let mut out: BTreeMap<Modality, Frames> = BTreeMap::new();
    for &m in &want {
        let frames = match m {
            Modality::RgbSilhouette => Frames::Image(sil.frames.clone()),
            Modality::Rgb => Frames::Image(rgb.clone()),
            Modality::Event => Frames::Image(simulate_events(rgb.view(), cfg.preprocess.event_threshold)),
            Modality::Pose2dHeatmap => {
                let aligned: Vec<[[f32; 2]; NUM_JOINTS]> = joints2d
                    .iter()
                    .zip(&sil.alignments)
                    .map(|(js, a)| js.map(|j| a.map_point(j[0] as f64, j[1] as f64)))
                    .collect();
                Frames::Image(pose_to_heatmaps(&aligned, cfg.preprocess.sigma))
            }
            Modality::Ir | Modality::IrSilhouette => {
                let ir_sil = normalize_silhouette(ir_masks.view())
                    .map_err(|_| SynthError::EmptyRender { frame: 0, what: "ir camera" })?;
                if m == Modality::Ir {
                    Frames::Image(align_stack(&ir_raw, &ir_sil))
                } else {
                    Frames::Image(ir_sil.frames)
                }
            }
            Modality::Depth => Frames::Image(stack(&depth)),
            Modality::LidarPoints => Frames::Points(lidar.clone()),
            Modality::RadarPoints => Frames::Points(radar.clone()),
            Modality::LidarProjDepth | Modality::RadarProjDepth => {
                let clouds = if m == Modality::LidarProjDepth { &lidar } else { &radar };
                let proj = cfg.preprocess.sparse_projection();
                let imgs = clouds
                    .iter()
                    .enumerate()
                    .map(|(t, c)| {
                        project_depth(c, &proj).map_err(|_| SynthError::EmptyRender { frame: t, what: "projection" })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Frames::Image(stack(&imgs))
            }
        };
        out.insert(m, frames);
    }

    let sequences = out
        .into_iter()
        .map(|(m, f)| {
            let seq = GaitSequence::new(rec.meta(m), f).expect("rendered frames satisfy sequence invariants");
            (m, seq)
        })
        .collect();
    Ok(MultiModalSample {
        recording: rec.clone(),
        sequences,
        joints2d,
        raw_silhouettes: masks,
        lidar_body_returns,
    })
}

fn align_stack(raw: &[Array3<f32>], aligned: &AlignedFrames) -> Array4<f32> {
    let frames: Vec<Array3<f32>> = aligned
        .kept
        .iter()
        .zip(&aligned.alignments)
        .map(|(&t, a)| align_with(&raw[t], a))
        .collect();
    stack(&frames)
}

fn stack(frames: &[Array3<f32>]) -> Array4<f32> {
    let views: Vec<_> = frames.iter().map(|f| f.view().insert_axis(Axis(0))).collect();
    ndarray::concatenate(Axis(0), &views).expect("frames share a shape")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_train_subjects: usize,
    pub n_test_subjects: usize,
    pub views: Vec<u16>,
    pub t_raw: usize,
    pub seed: u64,
    pub modalities: Vec<Modality>,
    pub render: RenderConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train_subjects: 20,
            n_test_subjects: 10,
            views: vec![0, 72, 144, 216, 288],
            t_raw: 30,
            seed: 0,
            modalities: Modality::ALL.to_vec(),
            render: RenderConfig::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_train_subjects == 0 || self.n_test_subjects == 0 {
            return Err(SynthError::InvalidConfig("subject counts must be at least 1".into()));
        }
        if let Some(&v) = self.views.iter().find(|&&v| !is_valid_view(v)) {
            return Err(SynthError::InvalidView(v));
        }
        if self.views.is_empty() || self.modalities.is_empty() {
            return Err(SynthError::InvalidConfig("views and modalities must be non-empty".into()));
        }
        if self.t_raw < 16 {
            return Err(SynthError::InvalidConfig(format!("t_raw {} is below 16", self.t_raw)));
        }
        self.render.validate()
    }

    pub fn subject_ids(&self) -> (Vec<String>, Vec<String>) {
        let id = |i: usize| format!("{:04}", i + 1);
        let train = (0..self.n_train_subjects).map(id).collect();
        let test = (self.n_train_subjects..self.n_train_subjects + self.n_test_subjects)
            .map(id)
            .collect();
        (train, test)
    }
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

/// Identity parameters of subject number `index` (0-based) in a dataset.
pub fn subject_identity(dataset_seed: u64, index: usize) -> BodyParams {
    sample_identity(mix_seed(&[dataset_seed, index as u64, 1]))
}

pub fn recording_seed(dataset_seed: u64, index: usize, view: u16, condition: Condition, trial: u8) -> u64 {
    mix_seed(&[dataset_seed, index as u64, view as u64, condition as u64 + 10, trial as u64])
}

pub fn trial_seed(dataset_seed: u64, index: usize, condition: Condition, trial: u8) -> u64 {
    mix_seed(&[dataset_seed, index as u64, condition as u64 + 10, trial as u64, 3])
}

/// Appearance seed: shared by NM and BG recordings, fresh for CL.
fn appearance_seed(dataset_seed: u64, index: usize, condition: Condition) -> u64 {
    let cl = (condition == Condition::Cl) as u64;
    mix_seed(&[dataset_seed, index as u64, 2 + cl])
}

/// Renders and writes a complete dataset, returning its manifest.
pub fn generate_dataset(cfg: &SynthConfig, root: &Path) -> Result<Manifest, SynthError> {
    cfg.validate()?;
    std::fs::create_dir_all(root).map_err(|source| {
        SynthError::DiskWriteError(StorageError::Io {
            path: root.to_path_buf(),
            source,
        })
    })?;
    let (train, test) = cfg.subject_ids();
    let mut splits = SplitTable::default();
    let mut entries = Vec::new();
    for (index, subject) in train.iter().chain(&test).enumerate() {
        let split = if index < train.len() { Split::Train } else { Split::Test };
        splits.subjects.insert(subject.clone(), split);
        let identity = subject_identity(cfg.seed, index);
        for &(condition, trial) in &RECORDINGS {
            for &view in &cfg.views {
                let rseed = recording_seed(cfg.seed, index, view, condition, trial);
                // phase and bag/clothing vary per trial but not per view
                let params = identity.for_recording(condition, trial_seed(cfg.seed, index, condition, trial));
                let rec = Recording {
                    subject_id: subject.clone(),
                    view_deg: view,
                    condition,
                    trial,
                };
                let look = Appearance::sample(appearance_seed(cfg.seed, index, condition));
                let sample = render_inner(&params, &rec, cfg.t_raw, &cfg.render, rseed, &look, &cfg.modalities)?;
                for seq in sample.sequences.values() {
                    let rel = write_sequence(root, seq)?;
                    entries.push(ManifestEntry {
                        meta: seq.meta.clone(),
                        rel_path: rel,
                        frame_count: seq.frame_count(),
                    });
                }
            }
        }
        log::info!("rendered subject {subject} ({})", split.name());
    }
    splits.write(root)?;
    let manifest = Manifest::new(root, entries)?;
    manifest.write_index()?;
    Ok(manifest)
}

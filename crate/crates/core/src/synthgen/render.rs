//! Orthographic ray casting of the capsule body in the sensor frame.
//!
//! Sensor frame: `x` lateral (camera right), `y` range away from the sensor,
//! `z` up. Every ray starts on the plane `y = 0` and travels along `+y`.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::body::{length, radius, BodyParams};
use super::skeleton::*;
use crate::dataset::Condition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Material {
    Skin,
    Shirt,
    Pants,
    Shoe,
    Bag,
}

impl Material {
    fn index(self) -> usize {
        self as usize
    }

    /// Thermal brightness used by the IR camera.
    fn emissivity(self) -> f32 {
        match self {
            Material::Skin => 0.95,
            Material::Shirt => 0.62,
            Material::Pants => 0.55,
            Material::Shoe => 0.4,
            Material::Bag => 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Capsule { a: Vec3, b: Vec3, r: f32 },
    /// Oriented box: center, unit axes, half extents along each axis.
    Box { c: Vec3, axes: [Vec3; 3], half: Vec3 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub material: Material,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub depth: f32,
    pub normal: Vec3,
    pub material: Material,
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: Vec3, b: Vec3) -> f32 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn madd(a: Vec3, b: Vec3, s: f32) -> Vec3 {
    [a[0] + b[0] * s, a[1] + b[1] * s, a[2] + b[2] * s]
}

fn normalize(a: Vec3) -> Vec3 {
    let n = dot(a, a).sqrt();
    if n > 0.0 {
        [a[0] / n, a[1] / n, a[2] / n]
    } else {
        [0.0, -1.0, 0.0]
    }
}

impl Shape {
    /// Extent in sensor `x` and `z`: `[xmin, xmax, zmin, zmax]`.
    fn footprint(&self) -> [f32; 4] {
        match *self {
            Shape::Capsule { a, b, r } => [
                a[0].min(b[0]) - r,
                a[0].max(b[0]) + r,
                a[2].min(b[2]) - r,
                a[2].max(b[2]) + r,
            ],
            Shape::Box { c, axes, half } => {
                let ex: f32 = (0..3).map(|i| (axes[i][0] * half[i]).abs()).sum();
                let ez: f32 = (0..3).map(|i| (axes[i][2] * half[i]).abs()).sum();
                [c[0] - ex, c[0] + ex, c[2] - ez, c[2] + ez]
            }
        }
    }

    /// First intersection of the ray from `(x, 0, z)` along `+y`.
    fn cast(&self, x: f32, z: f32) -> Option<(f32, Vec3)> {
        match *self {
            Shape::Capsule { a, b, r } => cast_capsule(a, b, r, x, z),
            Shape::Box { c, axes, half } => cast_box(c, axes, half, x, z),
        }
    }
}

fn cast_capsule(pa: Vec3, pb: Vec3, r: f32, x: f32, z: f32) -> Option<(f32, Vec3)> {
    let ro = [x, 0.0, z];
    let ba = sub(pb, pa);
    let oa = sub(ro, pa);
    let baba = dot(ba, ba);
    let bard = ba[1];
    let baoa = dot(ba, oa);
    let rdoa = oa[1];
    let oaoa = dot(oa, oa);
    let normal_at = |t: f32| {
        let q = [x, t, z];
        let h = if baba > 0.0 { (dot(sub(q, pa), ba) / baba).clamp(0.0, 1.0) } else { 0.0 };
        normalize(sub(q, madd(pa, ba, h)))
    };
    let a = baba - bard * bard;
    if a > 1e-9 * baba.max(1e-12) {
        let b = baba * rdoa - baoa * bard;
        let c = baba * oaoa - baoa * baoa - r * r * baba;
        let h = b * b - a * c;
        if h < 0.0 {
            return None;
        }
        let t = (-b - h.sqrt()) / a;
        let y = baoa + t * bard;
        if y > 0.0 && y < baba {
            return (t > 0.0).then(|| (t, normal_at(t)));
        }
    }
    // hemispherical caps
    let mut best: Option<f32> = None;
    for p in [pa, pb] {
        let oc = sub(ro, p);
        let b = oc[1];
        let c = dot(oc, oc) - r * r;
        let h = b * b - c;
        if h > 0.0 {
            let t = -b - h.sqrt();
            if t > 0.0 && best.is_none_or(|bt| t < bt) {
                best = Some(t);
            }
        }
    }
    best.map(|t| (t, normal_at(t)))
}

fn cast_box(c: Vec3, axes: [Vec3; 3], half: Vec3, x: f32, z: f32) -> Option<(f32, Vec3)> {
    let o = sub([x, 0.0, z], c);
    let mut t_near = f32::NEG_INFINITY;
    let mut t_far = f32::INFINITY;
    let mut n_near = [0.0; 3];
    for i in 0..3 {
        let oo = dot(o, axes[i]);
        let dd = axes[i][1];
        if dd.abs() < 1e-12 {
            if oo.abs() > half[i] {
                return None;
            }
            continue;
        }
        let t1 = (-half[i] - oo) / dd;
        let t2 = (half[i] - oo) / dd;
        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
        if lo > t_near {
            t_near = lo;
            let s = if dd > 0.0 { -1.0 } else { 1.0 };
            n_near = [axes[i][0] * s, axes[i][1] * s, axes[i][2] * s];
        }
        t_far = t_far.min(hi);
    }
    (t_near <= t_far && t_near > 0.0).then_some((t_near, n_near))
}

/// Viewpoint of a sensor that tracks the walker from a fixed heading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorPose {
    /// World position of the sensor plane origin (floor level).
    pub origin: Vec3,
    /// Unit viewing direction in world coordinates (horizontal).
    pub forward: Vec3,
    /// Unit camera-right direction in world coordinates.
    pub right: Vec3,
}

impl SensorPose {
    /// Sensor at distance `range` from `target`, placed at `view_deg` around
    /// it; 0 faces the walker's front, 90 sees the walker's left side.
    pub fn looking_at(target: Vec3, view_deg: f32, range: f32) -> SensorPose {
        let th = view_deg.to_radians();
        let (s, c) = th.sin_cos();
        // cos/sin of multiples of 90 degrees are snapped so mirrored views stay exact
        let snap = |v: f32| if v.abs() < 1e-6 { 0.0 } else { v };
        let (s, c) = (snap(s), snap(c));
        SensorPose {
            origin: [target[0] + range * c, target[1] + range * s, 0.0],
            forward: [-c, -s, 0.0],
            right: [-s, c, 0.0],
        }
    }

    pub fn to_sensor(&self, p: Vec3) -> Vec3 {
        let d = sub(p, self.origin);
        [dot(d, self.right), dot(d, self.forward), p[2]]
    }

    pub fn direction_to_sensor(&self, v: Vec3) -> Vec3 {
        [dot(v, self.right), dot(v, self.forward), v[2]]
    }
}

/// Capsule body in world coordinates.
pub fn body_primitives(params: &BodyParams, pose: &Pose, condition: Condition) -> Vec<Primitive> {
    let r = params.effective_radii();
    let j = &pose.joints;
    let head_r = params.limb_lengths[length::HEAD_RADIUS];
    let cap = |a: Vec3, b: Vec3, r: f32, material: Material| Primitive {
        shape: Shape::Capsule { a, b, r },
        material,
    };
    let tr = r[radius::TORSO];
    let mut out = vec![
        cap(pose.head, pose.head, head_r, Material::Skin),
        cap(pose.neck, pose.head, r[radius::NECK], Material::Skin),
        cap(
            madd(pose.pelvis, [0.0, 0.0, 1.0], 0.3 * tr),
            madd(pose.neck, [0.0, 0.0, 1.0], -0.6 * tr),
            tr,
            Material::Shirt,
        ),
        cap(j[L_SHOULDER], j[R_SHOULDER], 1.1 * r[radius::UPPER_ARM], Material::Shirt),
        cap(j[L_HIP], j[R_HIP], r[radius::THIGH], Material::Pants),
    ];
    let foot = 0.13 * params.height_m;
    for side in 0..2 {
        out.push(cap(j[L_SHOULDER + side], j[L_ELBOW + side], r[radius::UPPER_ARM], Material::Shirt));
        out.push(cap(j[L_ELBOW + side], j[L_WRIST + side], r[radius::FOREARM], Material::Skin));
        out.push(cap(j[L_HIP + side], j[L_KNEE + side], r[radius::THIGH], Material::Pants));
        out.push(cap(j[L_KNEE + side], j[L_ANKLE + side], r[radius::SHIN], Material::Pants));
        let ankle = j[L_ANKLE + side];
        out.push(cap(ankle, madd(ankle, [1.0, 0.0, 0.0], foot), 0.035, Material::Shoe));
    }
    if condition == Condition::Bg {
        if let Some(bag) = pose.bag {
            out.push(Primitive {
                shape: Shape::Box {
                    c: bag,
                    axes: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                    half: [0.08, 0.16, 0.21],
                },
                material: Material::Bag,
            });
        }
    }
    out
}

/// Primitives moved into a sensor frame, with their screen footprints.
#[derive(Debug, Clone)]
pub struct Scene {
    prims: Vec<(Primitive, [f32; 4])>,
}

impl Scene {
    pub fn new(world: &[Primitive], sensor: &SensorPose) -> Scene {
        let prims = world
            .iter()
            .map(|p| {
                let shape = match p.shape {
                    Shape::Capsule { a, b, r } => Shape::Capsule {
                        a: sensor.to_sensor(a),
                        b: sensor.to_sensor(b),
                        r,
                    },
                    Shape::Box { c, axes, half } => Shape::Box {
                        c: sensor.to_sensor(c),
                        axes: axes.map(|ax| sensor.direction_to_sensor(ax)),
                        half,
                    },
                };
                (Primitive { shape, material: p.material }, shape.footprint())
            })
            .collect();
        Scene { prims }
    }

    /// Nearest surface along the ray through `(x, z)`.
    pub fn cast(&self, x: f32, z: f32) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (p, fp) in &self.prims {
            if x < fp[0] || x > fp[1] || z < fp[2] || z > fp[3] {
                continue;
            }
            if let Some((t, n)) = p.shape.cast(x, z) {
                if best.is_none_or(|b| t < b.depth) {
                    best = Some(Hit {
                        depth: t,
                        normal: n,
                        material: p.material,
                    });
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    /// Meters per pixel.
    pub pitch: f32,
    pub rows: usize,
    pub cols: usize,
    /// Height of the top image edge above the floor.
    pub top_z: f32,
}

impl CameraConfig {
    pub fn pixel_center(&self, r: usize, c: usize) -> (f32, f32) {
        let x = (c as f32 + 0.5 - self.cols as f32 / 2.0) * self.pitch;
        let z = self.top_z - (r as f32 + 0.5) * self.pitch;
        (x, z)
    }

    /// Continuous pixel coordinates `(col, row)` of a sensor-frame point,
    /// pixel `j` spanning `[j, j + 1)`.
    pub fn project(&self, p: Vec3) -> (f64, f64) {
        (
            p[0] as f64 / self.pitch as f64 + self.cols as f64 / 2.0,
            (self.top_z as f64 - p[2] as f64) / self.pitch as f64,
        )
    }
}

/// Per-pixel hits of one camera.
#[derive(Debug, Clone)]
pub struct HitImage {
    pub cam: CameraConfig,
    pub hits: Array2<Option<Hit>>,
}

impl HitImage {
    pub fn render(scene: &Scene, cam: &CameraConfig) -> HitImage {
        let hits = Array2::from_shape_fn((cam.rows, cam.cols), |(r, c)| {
            let (x, z) = cam.pixel_center(r, c);
            scene.cast(x, z)
        });
        HitImage { cam: *cam, hits }
    }

    pub fn mask(&self) -> Array2<f32> {
        self.hits.mapv(|h| if h.is_some() { 1.0 } else { 0.0 })
    }

    /// One sensor-frame point per foreground pixel, at the pixel center.
    pub fn dense_cloud(&self) -> Vec<[f32; 3]> {
        self.hits
            .indexed_iter()
            .filter_map(|((r, c), h)| {
                h.map(|h| {
                    let (x, z) = self.cam.pixel_center(r, c);
                    [x, h.depth, z]
                })
            })
            .collect()
    }

    /// Shaded color image, `3 x rows x cols`, black background.
    pub fn color(&self, look: &Appearance) -> Array3<f32> {
        let mut img = Array3::zeros((3, self.cam.rows, self.cam.cols));
        for ((r, c), h) in self.hits.indexed_iter() {
            if let Some(h) = h {
                let (_, z) = self.cam.pixel_center(r, c);
                let mut albedo = look.colors[h.material.index()];
                if h.material == Material::Shirt {
                    let stripe = 0.82 + 0.18 * (z * look.stripe_freq).sin();
                    albedo = albedo.map(|v| v * stripe);
                }
                let s = shade(h.normal);
                for ch in 0..3 {
                    img[(ch, r, c)] = (albedo[ch] * s).clamp(0.02, 1.0);
                }
            }
        }
        img
    }

    /// Thermal image: material brightness times shading, gray in 3 channels.
    pub fn thermal(&self) -> Array3<f32> {
        let mut img = Array3::zeros((3, self.cam.rows, self.cam.cols));
        for ((r, c), h) in self.hits.indexed_iter() {
            if let Some(h) = h {
                let v = (h.material.emissivity() * (0.55 + 0.45 * shade(h.normal))).clamp(0.02, 1.0);
                for ch in 0..3 {
                    img[(ch, r, c)] = v;
                }
            }
        }
        img
    }
}

fn shade(n: Vec3) -> f32 {
    const LIGHT: Vec3 = [-0.35, -0.8, 0.48];
    0.3 + 0.7 * dot(n, normalize(LIGHT)).max(0.0)
}

/// Surface colors of one recording; changes with clothing.
#[derive(Debug, Clone, PartialEq)]
pub struct Appearance {
    pub colors: [[f32; 3]; 5],
    pub stripe_freq: f32,
}

impl Appearance {
    pub fn sample(seed: u64) -> Appearance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let skin_tone = rng.random_range(0.45..0.95);
        let mut cloth = || std::array::from_fn(|_| rng.random_range(0.15f32..0.95));
        let colors = [
            [skin_tone, skin_tone * 0.78, skin_tone * 0.62],
            cloth(),
            cloth(),
            cloth(),
            cloth(),
        ];
        Appearance {
            colors,
            stripe_freq: rng.random_range(20.0..60.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LidarConfig {
    /// Ray spacing in meters; controls the per-person point count.
    pub spacing: f32,
    /// Uniform jitter of each ray, in units of `spacing`.
    pub jitter: f32,
    pub range_noise: f32,
    pub floor_step: f32,
    pub floor_noise: f32,
    pub clutter_points: usize,
}

impl Default for LidarConfig {
    fn default() -> Self {
        LidarConfig {
            spacing: 0.02,
            jitter: 0.3,
            range_noise: 0.004,
            floor_step: 0.08,
            floor_noise: 0.008,
            clutter_points: 25,
        }
    }
}

/// A labeled raw scan: body returns first, then floor, then clutter.
#[derive(Debug, Clone)]
pub struct RawScan {
    pub points: Vec<[f32; 3]>,
    pub body: usize,
    pub floor: usize,
}

/// Jittered-grid scan of a scene over the camera's field of view, plus
/// floor returns around the walker and scattered clutter.
pub fn lidar_scan<R: Rng>(scene: &Scene, cam: &CameraConfig, cfg: &LidarConfig, range: f32, rng: &mut R) -> RawScan {
    let half_w = cam.cols as f32 * cam.pitch / 2.0;
    let bottom = cam.top_z - cam.rows as f32 * cam.pitch;
    let nx = (2.0 * half_w / cfg.spacing) as usize;
    let nz = ((cam.top_z - bottom) / cfg.spacing) as usize;
    let range_noise = Normal::new(0.0, cfg.range_noise as f64).expect("finite noise");
    let mut points = Vec::new();
    for iz in 0..nz {
        for ix in 0..nx {
            let jx = rng.random_range(-cfg.jitter..=cfg.jitter);
            let jz = rng.random_range(-cfg.jitter..=cfg.jitter);
            let x = -half_w + (ix as f32 + 0.5 + jx) * cfg.spacing;
            let z = cam.top_z - (iz as f32 + 0.5 + jz) * cfg.spacing;
            if let Some(h) = scene.cast(x, z) {
                points.push([x, h.depth + range_noise.sample(rng) as f32, z]);
            }
        }
    }
    let body = points.len();
    let floor_noise = Normal::new(0.0, cfg.floor_noise as f64).expect("finite noise");
    let steps = |extent: f32| (extent / cfg.floor_step) as usize;
    for iy in 0..steps(3.0) {
        for ix in 0..steps(2.0 * half_w) {
            points.push([
                -half_w + ix as f32 * cfg.floor_step,
                range - 1.5 + iy as f32 * cfg.floor_step,
                floor_noise.sample(rng) as f32,
            ]);
        }
    }
    let floor = points.len() - body;
    for _ in 0..cfg.clutter_points {
        points.push([
            rng.random_range(-1.5..1.5),
            rng.random_range(range - 3.0..range + 3.0),
            rng.random_range(0.1..2.4),
        ]);
    }
    RawScan { points, body, floor }
}
